"""Reverse-mode automatic differentiation over numpy arrays.

Every model function in this package is written against the helpers in this
module (``sin``, ``tanh``, ``stack`` ...).  Called with plain ``ndarray``
arguments they are thin aliases of the numpy functions; called with
:class:`Var` arguments they additionally record a node on the owning
:class:`Tape`.  The taped value of a loss is therefore bit-identical to the
untaped one, because the same numpy calls run in the same order.

Nodes are appended in creation order, so the list order is a topological
order and the reverse sweep simply walks it backwards.
"""
from __future__ import annotations

import gc
from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(FloatingPointError):
    """A taped intermediate evaluated to inf or nan."""

    def __init__(self, node: int, op: str):
        super().__init__(f"non-finite value at tape node {node} ({op})")
        self.node = node
        self.op = op


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.sum(g)
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tape:
    """Linear record of elementary operations.

    ``values[i]`` is the output of node ``i``; ``parents[i]`` and ``vjps[i]``
    are aligned tuples (parent index, vector-Jacobian product closure);
    ``forwards[i]`` recomputes the value from the parent values and is used by
    :meth:`replay`.
    """

    def __init__(self):
        self.values = []
        self.parents = []
        self.vjps = []
        self.forwards = []
        self.ops = []

    def __len__(self):
        return len(self.values)

    def variable(self, value) -> "Var":
        value = np.asarray(value, dtype=float)
        return self._push("input", value, (), (), None)

    def _push(self, op, value, parents, vjps, forward):
        idx = len(self.values)
        self.values.append(value)
        self.parents.append(parents)
        self.vjps.append(vjps)
        self.forwards.append(forward)
        self.ops.append(op)
        return Var(self, idx, value)

    def first_nonfinite(self):
        for i, v in enumerate(self.values):
            if not np.all(np.isfinite(v)):
                return i
        return None

    def backward(self, out: "Var", wrt=None):
        """Adjoint sweep from scalar ``out``; returns gradients of ``wrt``."""
        if np.size(out.value) != 1:
            raise ValueError("backward() needs a scalar output")
        grads = [None] * (out.idx + 1)
        grads[out.idx] = np.ones_like(out.value)
        parents, vjps = self.parents, self.vjps
        for i in range(out.idx, -1, -1):
            g = grads[i]
            if g is None or not parents[i]:
                continue
            for p, vjp in zip(parents[i], vjps[i]):
                gp = vjp(g)
                if grads[p] is None:
                    grads[p] = gp
                else:
                    grads[p] = grads[p] + gp
        if wrt is None:
            return grads
        return [
            np.zeros_like(w.value) if w.idx >= len(grads) or grads[w.idx] is None
            else grads[w.idx]
            for w in wrt
        ]

    def replay(self):
        """Recompute every node from the recorded forwards; returns the values."""
        out = []
        for i, fwd in enumerate(self.forwards):
            if fwd is None:
                out.append(self.values[i])
            else:
                out.append(fwd(*[out[p] for p in self.parents[i]]))
        return out


def _val(x):
    return x.value if isinstance(x, Var) else x


class Var:
    """Array-valued node on a tape.  Supports numpy-style arithmetic."""

    __slots__ = ("tape", "idx", "value")
    __array_ufunc__ = None  # make ndarray <op> Var dispatch to Var's reflected op

    def __init__(self, tape, idx, value):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(#{self.idx}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        v = self.value
        return self.tape._push("neg", -v, (self.idx,), (lambda g: -g,), lambda a: -a)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)


def _binary(name, a, b, fn, da, db):
    """Record ``fn(a, b)``; ``da``/``db`` map (g, a, b, out) to the raw parent grad."""
    av, bv = _val(a), _val(b)
    out = fn(av, bv)
    a_var, b_var = isinstance(a, Var), isinstance(b, Var)
    tape = a.tape if a_var else b.tape
    parents, vjps = [], []
    if a_var:
        sa = av.shape
        parents.append(a.idx)
        vjps.append(lambda g: _unbroadcast(da(g, av, bv, out), sa))
    if b_var:
        sb = np.shape(bv)
        parents.append(b.idx)
        vjps.append(lambda g: _unbroadcast(db(g, av, bv, out), sb))
    if a_var and b_var:
        forward = fn
    elif a_var:
        forward = lambda x: fn(x, bv)
    else:
        forward = lambda y: fn(av, y)
    return tape._push(name, out, tuple(parents), tuple(vjps), forward)


def _unary(name, a, fn, d):
    """Record ``fn(a)``; ``d`` maps (g, a, out) to the parent grad."""
    av = a.value
    out = fn(av)
    return a.tape._push(name, out, (a.idx,), (lambda g: d(g, av, out),), fn)


def add(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return a + b
    return _binary("add", a, b, np.add, lambda g, a, b, o: g, lambda g, a, b, o: g)


def sub(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return a - b
    return _binary("sub", a, b, np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g)


def mul(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return a * b
    return _binary("mul", a, b, np.multiply,
                   lambda g, a, b, o: g * b, lambda g, a, b, o: g * a)


def div(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return a / b
    return _binary("div", a, b, np.true_divide,
                   lambda g, a, b, o: g / b, lambda g, a, b, o: -g * o / b)


def _mm_da(g, a, b, o):
    if b.ndim == 1:
        return np.multiply.outer(g, b) if a.ndim > 1 else g * b
    if a.ndim == 1:
        return b @ g
    return g @ np.swapaxes(b, -1, -2)


def _mm_db(g, a, b, o):
    if a.ndim == 1:
        return np.multiply.outer(a, g) if b.ndim > 1 else g * a
    if b.ndim == 1:
        return np.einsum("...i,...ij->j", g, a) if a.ndim > 2 else a.T @ g
    if a.ndim > 2 or b.ndim > 2:
        return np.swapaxes(a, -1, -2) @ g
    return a.T @ g


def matmul(a, b):
    """Matrix product with shape checking; ``x @ W`` for batched row vectors."""
    av, bv = _val(a), _val(b)
    if av.shape[-1] != bv.shape[0 if bv.ndim == 1 else -2]:
        raise ValueError(f"matmul shape mismatch {av.shape} @ {bv.shape}")
    if not isinstance(a, Var) and not isinstance(b, Var):
        return av @ bv
    return _binary("matmul", a, b, np.matmul, _mm_da, _mm_db)


def tanh(a):
    if not isinstance(a, Var):
        return np.tanh(a)
    return _unary("tanh", a, np.tanh, lambda g, a, o: g * (1.0 - o * o))


def exp(a):
    if not isinstance(a, Var):
        return np.exp(a)
    return _unary("exp", a, np.exp, lambda g, a, o: g * o)


def sin(a):
    if not isinstance(a, Var):
        return np.sin(a)
    return _unary("sin", a, np.sin, lambda g, a, o: g * np.cos(a))


def cos(a):
    if not isinstance(a, Var):
        return np.cos(a)
    return _unary("cos", a, np.cos, lambda g, a, o: -g * np.sin(a))


def sqrt(a):
    if not isinstance(a, Var):
        return np.sqrt(a)
    return _unary("sqrt", a, np.sqrt, lambda g, a, o: g * 0.5 / o)


def abs_(a):
    """|a| with derivative sign(a); the subgradient at 0 is taken as 0."""
    if not isinstance(a, Var):
        return np.abs(a)
    return _unary("abs", a, np.abs, lambda g, a, o: g * np.sign(a))


def square(a):
    if not isinstance(a, Var):
        return a * a
    return _unary("square", a, np.square, lambda g, a, o: 2.0 * g * a)


def sum_(a, axis=None, keepdims=False):
    if not isinstance(a, Var):
        return np.sum(a, axis=axis, keepdims=keepdims)
    av = a.value
    shape = av.shape

    def d(g, a, o):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape)

    return _unary("sum", a, lambda x: np.sum(x, axis=axis, keepdims=keepdims), d)


def mean(a, axis=None):
    n = np.size(_val(a)) if axis is None else np.shape(_val(a))[axis]
    return sum_(a, axis=axis) / float(n)


def _is_basic(key):
    keys = key if isinstance(key, tuple) else (key,)
    return all(k is Ellipsis or k is None or isinstance(k, (int, slice)) for k in keys)


def getitem(a, key):
    av = a.value
    shape = av.shape

    basic = _is_basic(key)

    def d(g, a, o):
        z = np.zeros(shape)
        if basic:
            z[key] = g
        else:
            np.add.at(z, key, g)
        return z

    return _unary("getitem", a, lambda x: x[key], d)


def reshape(a, shape):
    if not isinstance(a, Var):
        return np.reshape(a, shape)
    old = a.value.shape
    return _unary("reshape", a, lambda x: np.reshape(x, shape),
                  lambda g, a, o: np.reshape(g, old))


def transpose(a):
    if not isinstance(a, Var):
        return np.transpose(a)
    return _unary("transpose", a, np.transpose, lambda g, a, o: np.transpose(g))


def where(mask, a, b):
    """Branch selection with a constant boolean mask (no gradient to the mask)."""
    mask = np.asarray(_val(mask), dtype=bool)
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.where(mask, a, b)
    return _binary("where", a, b, lambda x, y: np.where(mask, x, y),
                   lambda g, x, y, o: np.where(mask, g, 0.0),
                   lambda g, x, y, o: np.where(mask, 0.0, g))


def _join(name, items, axis, np_fn):
    vals = [_val(x) for x in items]
    if not any(isinstance(x, Var) for x in items):
        return np_fn(vals, axis=axis)
    tape = next(x.tape for x in items if isinstance(x, Var))
    out = np_fn(vals, axis=axis)
    ax = axis % out.ndim
    var_pos = [i for i, x in enumerate(items) if isinstance(x, Var)]
    parents = tuple(items[i].idx for i in var_pos)
    if np_fn is np.stack:
        vjps = tuple((lambda g, i=i: np.take(g, i, axis=ax)) for i in var_pos)
    else:
        bounds = np.cumsum([0] + [v.shape[ax] for v in vals])
        vjps = tuple(
            (lambda g, lo=bounds[i], hi=bounds[i + 1]:
             np.take(g, np.arange(lo, hi), axis=ax))
            for i in var_pos
        )

    def forward(*pv):
        it = iter(pv)
        return np_fn([next(it) if i in var_pos else vals[i]
                      for i in range(len(vals))], axis=axis)

    return tape._push(name, out, parents, vjps, forward)


def concatenate(items, axis=-1):
    return _join("concatenate", list(items), axis, np.concatenate)


def stack(items, axis=-1):
    """Stack arrays; plain scalars/arrays are broadcast to the Var shape first."""
    items = list(items)
    ref = next((x for x in items if isinstance(x, Var)), None)
    if ref is None:
        shapes = [np.shape(x) for x in items]
        if all(sh == shapes[0] for sh in shapes):
            return np.stack(items, axis=axis)
        shape = np.broadcast_shapes(*shapes)
        return np.stack([np.broadcast_to(x, shape) for x in items], axis=axis)
    shape = ref.value.shape
    items = [x if isinstance(x, Var) else np.broadcast_to(np.asarray(x, float), shape)
             for x in items]
    return _join("stack", items, axis, np.stack)


def value(x):
    """Underlying array of a Var, or ``x`` itself."""
    return _val(x)


def grad(loss, params):
    """Value and gradient of ``loss(theta)`` at the flat vector ``params``.

    ``params`` may be a :class:`ParamStore` or an array.  ``loss`` must build
    its result from the helpers in this module.  Raises
    :class:`NonFiniteError` naming the first non-finite node when the value
    or gradient is not finite.
    """
    flat = params.values if isinstance(params, ParamStore) else np.asarray(params, float)
    tape = Tape()
    theta = tape.variable(flat)
    # the tape holds ~1e5 small containers; cyclic GC passes over them dominate runtime
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        out = loss(theta)
        if not isinstance(out, Var):
            return float(out), np.zeros_like(flat)
        val = out.value
        if not np.all(np.isfinite(val)):
            i = tape.first_nonfinite()
            raise NonFiniteError(i, tape.ops[i])
        (g,) = tape.backward(out, [theta])
    finally:
        if gc_was_enabled:
            gc.enable()
    if not np.all(np.isfinite(g)):
        raise NonFiniteError(out.idx, "backward")
    return float(val), g


@dataclass
class ParamStore:
    """Flat parameter vector with named, shaped slices.

    ``layout`` maps each name to ``(start, stop, shape)``.  Slices are laid out
    contiguously in insertion order.
    """

    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    layout: dict = field(default_factory=dict)

    @property
    def size(self):
        return int(self.values.size)

    def add(self, name, init):
        init = np.asarray(init, dtype=float)
        if name in self.layout:
            raise KeyError(f"duplicate parameter slice {name!r}")
        start = self.size
        self.layout[name] = (start, start + init.size, init.shape)
        self.values = np.concatenate([self.values, init.ravel()])

    def get(self, name, flat=None):
        start, stop, shape = self.layout[name]
        flat = self.values if flat is None else flat
        if isinstance(flat, Var):
            return reshape(getitem(flat, slice(start, stop)), shape)
        return np.reshape(flat[start:stop], shape)

    def unpack(self, flat=None):
        return {name: self.get(name, flat) for name in self.layout}

    def prefixed(self, prefix, flat=None):
        """Slices whose names start with ``prefix`` (prefix stripped)."""
        return {name[len(prefix):]: self.get(name, flat)
                for name in self.layout if name.startswith(prefix)}

    def slice_of(self, name):
        start, stop, _ = self.layout[name]
        return slice(start, stop)

    def with_values(self, values):
        return ParamStore(np.array(values, dtype=float), dict(self.layout))

    def check_layout(self):
        cursor = 0
        for start, stop, shape in self.layout.values():
            if start != cursor or stop - start != int(np.prod(shape)):
                return False
            cursor = stop
        return cursor == self.size

    def to_dict(self):
        return {name: self.get(name).tolist() for name in self.layout}


@dataclass(frozen=True)
class MLPSpec:
    """Layer sizes ``(in, h1, ..., out)``; tanh on hidden layers."""

    sizes: tuple
    bias: bool = True
    output_activation: str | None = None

    @property
    def n_params(self):
        n = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            n += a * b + (b if self.bias else 0)
        return n


def mlp_init(store, prefix, spec, rng, out_scale=1.0, bias_scale=0.0):
    """Append the weights of an MLP to ``store`` under ``prefix``."""
    n_layers = len(spec.sizes) - 1
    for i, (a, b) in enumerate(zip(spec.sizes[:-1], spec.sizes[1:])):
        w = rng.normal(0.0, 1.0 / np.sqrt(a), size=(a, b))
        if i == n_layers - 1:
            w *= out_scale
        store.add(f"{prefix}W{i}", w)
        if spec.bias:
            store.add(f"{prefix}b{i}", bias_scale * rng.normal(size=b))


def mlp_forward(x, weights, spec, no_bias=None):
    """Evaluate an MLP on row vectors ``x`` (shape ``(..., in)``).

    ``weights`` maps ``W0, b0, W1, ...`` to arrays (``Wi`` has shape
    ``(in_i, out_i)``).  With ``no_bias`` (default ``not spec.bias``) every bias
    is omitted, so a zero input maps to an exactly zero output.
    """
    if no_bias is None:
        no_bias = not spec.bias
    if np.shape(value(x))[-1] != spec.sizes[0]:
        raise ValueError(f"MLP input has size {np.shape(value(x))[-1]}, expected {spec.sizes[0]}")
    n_layers = len(spec.sizes) - 1
    h = x
    for i in range(n_layers):
        w = weights[f"W{i}"]
        if np.shape(value(w)) != (spec.sizes[i], spec.sizes[i + 1]):
            raise ValueError(f"layer {i} weight shape {np.shape(value(w))}")
        h = h @ w
        if not no_bias:
            h = h + weights[f"b{i}"]
        if i < n_layers - 1:
            h = tanh(h)
        elif spec.output_activation == "tanh":
            h = tanh(h)
    return h
