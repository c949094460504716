"""Youla-residual policies and baseline policies.

Augmented state layouts (each followed by one running-cost coordinate):

* Youla-LRU: ``(x, xhat, q_re, q_im, J)``
* MLP baselines: ``(x, J)``
* LSTM baselines: ``(x, J)``; the LSTM cell is a discrete carry updated once
  per integration step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import MLPSpec, ParamStore, mlp_forward, mlp_init
from .lincontrol import hurwitz_test

FD_STEP = 1e-6


# -- generic observer-plus-Q objects -------------------------------------------

@dataclass
class GenericQPolicy:
    """``xhat' = f(x) - s(x - xhat) + g(x) u``, ``q' = f_q(q, xhat, x)``,
    ``u = K xhat + h_q(q, xhat, x)``."""

    s: object
    f_q: object
    h_q: object
    K: np.ndarray
    n: int
    n_q: int

    def closed_loop_field(self, plant):
        n, nq, K = self.n, self.n_q, self.K

        def F(z):
            x, xh, q = z[..., :n], z[..., n:2 * n], z[..., 2 * n:2 * n + nq]
            u = xh @ K.T + self.h_q(q, xh, x)
            fx = plant.f(x)
            gu = plant.g_times(x, u)
            dx = fx + gu
            dxh = fx - self.s(x - xh) + gu
            dq = self.f_q(q, xh, x)
            return ad.concatenate([dx, dxh, dq], axis=-1)

        return F

    def input_of(self, z):
        n, nq = self.n, self.n_q
        x, xh, q = z[..., :n], z[..., n:2 * n], z[..., 2 * n:2 * n + nq]
        return xh @ self.K.T + self.h_q(q, xh, x)


@dataclass
class GenericCController:
    """``x_c' = f_c(x_c, x)``, ``u = h_c(x_c, x)``; ``n_c = 0`` is a static law."""

    f_c: object
    h_c: object
    n_c: int
    x_c0: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def closed_loop_field(self, plant):
        n = plant.n

        def F(z):
            x, xc = z[..., :n], z[..., n:n + self.n_c]
            u = self.h_c(xc, x)
            parts = [plant.f(x) + plant.g_times(x, u)]
            if self.n_c:
                parts.append(self.f_c(xc, x))
            return ad.concatenate(parts, axis=-1)

        return F

    def input_of(self, z, n):
        return self.h_c(z[..., n:n + self.n_c], z[..., :n])


def fd_jacobian(fun, x0, step=FD_STEP):
    x0 = np.asarray(x0, dtype=float)
    cols = []
    for j in range(x0.size):
        e = np.zeros_like(x0)
        e[j] = step
        cols.append((np.asarray(fun(x0 + e)) - np.asarray(fun(x0 - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def _unit_ball(rng, dim):
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v) * rng.uniform() ** (1.0 / dim)


def check_conditions(qp: GenericQPolicy, plant, draws=100, rng=None, tol=1e-12):
    """Evaluate the four sufficiency conditions; returns ``{name: {"pass", "witness"}}``."""
    rng = np.random.default_rng(0) if rng is None else rng
    n, nq = qp.n, qp.n_q
    A, B = plant.linearize()
    report = {}

    v = hurwitz_test(A + B @ qp.K)
    report["i"] = {"pass": v.hurwitz, "witness": v.reason}

    s0 = np.asarray(qp.s(np.zeros(n)), dtype=float)
    if np.max(np.abs(s0)) > tol:
        report["ii"] = {"pass": False, "witness": f"s(0) = {s0.tolist()}"}
    else:
        v = hurwitz_test(fd_jacobian(qp.s, np.zeros(n)))
        report["ii"] = {"pass": v.hurwitz, "witness": v.reason}

    zn, zq = np.zeros(n), np.zeros(nq)
    fq0 = np.asarray(qp.f_q(zq, zn, zn), dtype=float)
    if np.max(np.abs(fq0), initial=0.0) > tol:
        report["iii"] = {"pass": False, "witness": f"f_q(0,0,0) = {fq0.tolist()}"}
    else:
        J = fd_jacobian(lambda q: qp.f_q(q, zn, zn), zq)
        v = hurwitz_test(J) if nq else None
        report["iii"] = {"pass": True if v is None else v.hurwitz,
                         "witness": "n_q = 0" if v is None else v.reason}

    witness, ok = None, True
    h0 = np.asarray(qp.h_q(zq, zn, zn), dtype=float)
    if np.max(np.abs(h0)) > tol:
        ok, witness = False, {"h_q(0,0,0)": h0.tolist()}
    for _ in range(draws):
        if not ok:
            break
        q, y = _unit_ball(rng, nq), _unit_ball(rng, n)
        for name, fn in (("f_q", qp.f_q), ("h_q", qp.h_q)):
            a = np.asarray(fn(q, y, y), dtype=float)
            b = np.asarray(fn(q, zn, zn), dtype=float)
            if np.max(np.abs(a - b), initial=0.0) > tol * (1.0 + np.max(np.abs(b), initial=0.0)):
                ok = False
                witness = {"map": name, "q": q.tolist(), "y": y.tolist(),
                           "gap": float(np.max(np.abs(a - b)))}
                break
    report["iv"] = {"pass": ok, "witness": witness or f"{draws} draws"}
    return report


# -- Youla LRU policy ----------------------------------------------------------

def build_diagonals(mu_xhat, mu_re, mu_im):
    """``(diag of Lambda_xhat, (Re, Im) of diag Lambda_q, diag Gamma)``."""
    a = ad.abs_(mu_re)
    return -ad.abs_(mu_xhat), (-a, mu_im), a


class Policy:
    """Common surface for trainable policies."""

    kind = ""
    structural = False   # True when LES holds by construction
    n = 4
    m = 1

    def __init__(self, K):
        self.K = np.atleast_2d(np.asarray(K, dtype=float))
        self.m, self.n = self.K.shape
        self.store = ParamStore()

    @property
    def n_params(self):
        return self.store.size

    def params(self, flat=None):
        return self.store.unpack(flat)

    def state_dim(self):
        raise NotImplementedError


class YoulaLRU(Policy):
    kind = "youla"
    structural = True

    def __init__(self, K, n_q=16, readout_hidden=(64, 64), init_hidden=48,
                 mu_range=(0.5, 1.5), rng=None, out_scale=0.1):
        super().__init__(K)
        rng = np.random.default_rng(0) if rng is None else rng
        n, m = self.n, self.m
        self.n_q = n_q
        self.readout_spec = MLPSpec((n_q + n,) + tuple(readout_hidden) + (m,), bias=False)
        self.xhat_spec = MLPSpec((n, init_hidden, n), bias=True)
        self.q_spec = MLPSpec((n, init_hidden, n_q), bias=True)
        lo, hi = mu_range
        s = self.store

        def signed(k):
            return rng.choice([-1.0, 1.0], size=k) * rng.uniform(lo, hi, size=k)

        s.add("mu_xhat", signed(n))
        s.add("mu_re", signed(n_q))
        s.add("mu_im", rng.normal(size=n_q))
        s.add("B_q", rng.normal(0.0, 1.0 / np.sqrt(n), size=(n_q, n)))
        mlp_init(s, "phi1.", self.xhat_spec, rng, out_scale=out_scale)
        mlp_init(s, "phi2.", self.q_spec, rng, out_scale=out_scale)
        s.add("nu", np.ones(n_q))
        mlp_init(s, "phi3.", self.readout_spec, rng, out_scale=out_scale)

    def state_dim(self):
        return 2 * self.n + 2 * self.n_q

    def _split(self, pr):
        nets = {k: {} for k in ("phi1.", "phi2.", "phi3.")}
        for name, v in pr.items():
            for pre in nets:
                if name.startswith(pre):
                    nets[pre][name[len(pre):]] = v
        return nets

    def initial_state(self, x0, pr):
        """``(x0, xhat0, q0_re, q0_im=0, J=0)`` rows for a batch of ``x0``."""
        x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        nets = self._split(pr)
        xh0 = x0 + mlp_forward(x0, nets["phi1."], self.xhat_spec)
        qr0 = pr["nu"] * mlp_forward(x0, nets["phi2."], self.q_spec)
        zeros = np.zeros((x0.shape[0], self.n_q + 1))
        return ad.concatenate([x0, xh0, qr0, zeros], axis=-1)

    def readout(self, e, q_re, xh, phi3):
        return xh @ self.K.T + mlp_forward(ad.concatenate([q_re, e], axis=-1), phi3,
                                           self.readout_spec)

    def closed_loop(self, plant, pr, cost=None):
        return _YoulaLoop(self, plant, pr, cost)

    def as_q_policy(self, pr):
        """The policy as a :class:`GenericQPolicy` with ``q = (q_re, q_im)``."""
        lam_x, (lam_re, lam_im), gam = build_diagonals(pr["mu_xhat"], pr["mu_re"], pr["mu_im"])
        phi3 = self._split(pr)["phi3."]
        nq, Bq = self.n_q, pr["B_q"]

        def s(zeta):
            return lam_x * zeta

        def f_q(q, xh, x):
            qr, qi = q[..., :nq], q[..., nq:]
            drive = gam * ((x - xh) @ Bq.T)
            return np.concatenate([lam_re * qr - lam_im * qi + drive,
                                   lam_im * qr + lam_re * qi], axis=-1)

        def h_q(q, xh, x):
            return mlp_forward(np.concatenate([q[..., :nq], x - xh], axis=-1), phi3,
                               self.readout_spec)

        return GenericQPolicy(s=s, f_q=f_q, h_q=h_q, K=self.K, n=self.n, n_q=2 * nq)


class _YoulaLoop:
    def __init__(self, pol, plant, pr, cost):
        self.pol, self.plant, self.cost = pol, plant, cost
        n, nq = pol.n, pol.n_q
        self.sl = (slice(0, n), slice(n, 2 * n), slice(2 * n, 2 * n + nq),
                   slice(2 * n + nq, 2 * n + 2 * nq))
        lam_x, (lam_re, lam_im), gam = build_diagonals(pr["mu_xhat"], pr["mu_re"], pr["mu_im"])
        self.neg_lam_x = -lam_x
        self.lam_re, self.lam_im = lam_re, lam_im
        # Gamma B_q as one matrix, applied to row vectors
        self.gam_bq_T = ad.transpose(ad.reshape(gam, (nq, 1)) * pr["B_q"])
        self.phi3 = pol._split(pr)["phi3."]

    def rates(self, z):
        sx, sh, sr, si = self.sl
        x, xh, qr, qi = z[..., sx], z[..., sh], z[..., sr], z[..., si]
        e = x - xh
        u = self.pol.readout(e, qr, xh, self.phi3)
        dx = self.plant.rhs(x, u)
        dxh = dx + self.neg_lam_x * e
        dqr = self.lam_re * qr - self.lam_im * qi + e @ self.gam_bq_T
        dqi = self.lam_im * qr + self.lam_re * qi
        return x, u, [dx, dxh, dqr, dqi]

    def field(self, z):
        x, _, parts = self.rates(z)
        if self.cost is not None:
            parts.append(ad.reshape(self.cost(x), np.shape(ad.value(x))[:-1] + (1,)))
        return ad.concatenate(parts, axis=-1)

    def readout(self, z):
        sx, sh, sr, _ = self.sl
        x, xh = z[..., sx], z[..., sh]
        return self.pol.readout(x - xh, z[..., sr], xh, self.phi3)


# -- baselines -----------------------------------------------------------------

class MLPPolicy(Policy):
    """``u = [K x +] MLP(x)``."""

    structural = False

    def __init__(self, K, residual=True, hidden=(96, 96), rng=None, out_scale=0.1):
        super().__init__(K)
        rng = np.random.default_rng(0) if rng is None else rng
        self.residual = residual
        self.kind = "residual_mlp" if residual else "pure_mlp"
        self.spec = MLPSpec((self.n,) + tuple(hidden) + (self.m,), bias=True)
        mlp_init(self.store, "", self.spec, rng, out_scale=out_scale if residual else 1.0)

    def state_dim(self):
        return self.n

    def initial_state(self, x0, pr):
        x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        return np.concatenate([x0, np.zeros((x0.shape[0], 1))], axis=-1)

    def act(self, x, pr):
        u = mlp_forward(x, pr, self.spec)
        return x @ self.K.T + u if self.residual else u

    def closed_loop(self, plant, pr, cost=None):
        return _StaticLoop(self, plant, pr, cost)


class _StaticLoop:
    def __init__(self, pol, plant, pr, cost):
        self.pol, self.plant, self.pr, self.cost = pol, plant, pr, cost

    def field(self, z):
        n = self.pol.n
        x = z[..., :n]
        dx = self.plant.rhs(x, self.pol.act(x, self.pr))
        if self.cost is None:
            return dx
        c = ad.reshape(self.cost(x), np.shape(ad.value(x))[:-1] + (1,))
        return ad.concatenate([dx, c], axis=-1)

    def readout(self, z):
        return self.pol.act(z[..., :self.pol.n], self.pr)


def _sigmoid(a):
    return 0.5 * (ad.tanh(0.5 * a) + 1.0)


class LSTMPolicy(Policy):
    """``u = [K x +] W_o h + b_o`` with an LSTM cell fed ``x`` once per step.

    The control is held constant over each integration step.
    """

    structural = False

    def __init__(self, K, residual=True, hidden=47, rng=None, out_scale=0.1):
        super().__init__(K)
        rng = np.random.default_rng(0) if rng is None else rng
        self.residual = residual
        self.kind = "residual_lstm" if residual else "pure_lstm"
        self.hidden = H = hidden
        n, m = self.n, self.m
        s = self.store
        s.add("Wx", rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, 4 * H)))
        s.add("Wh", rng.normal(0.0, 1.0 / np.sqrt(H), size=(H, 4 * H)))
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget-gate bias
        s.add("b", b)
        s.add("Wo", (out_scale if residual else 1.0) * rng.normal(0.0, 1.0 / np.sqrt(H), size=(H, m)))
        s.add("bo", np.zeros(m))

    def state_dim(self):
        return self.n

    def initial_state(self, x0, pr):
        x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        return np.concatenate([x0, np.zeros((x0.shape[0], 1))], axis=-1)

    def cell(self, x, h, c, pr):
        H = self.hidden
        a = x @ pr["Wx"] + h @ pr["Wh"] + pr["b"]
        i, f = _sigmoid(a[..., :H]), _sigmoid(a[..., H:2 * H])
        g, o = ad.tanh(a[..., 2 * H:3 * H]), _sigmoid(a[..., 3 * H:])
        c = f * c + i * g
        h = o * ad.tanh(c)
        u = h @ pr["Wo"] + pr["bo"]
        if self.residual:
            u = x @ self.K.T + u
        return u, h, c

    def closed_loop(self, plant, pr, cost=None):
        return _LSTMLoop(self, plant, pr, cost)


class _LSTMLoop:
    def __init__(self, pol, plant, pr, cost):
        self.pol, self.plant, self.pr, self.cost = pol, plant, pr, cost
        self.h = self.c = None
        self.u = None

    def begin_step(self, z):
        x = z[..., :self.pol.n]
        if self.h is None:
            shape = np.shape(ad.value(x))[:-1] + (self.pol.hidden,)
            self.h = self.c = np.zeros(shape)
        self.u, self.h, self.c = self.pol.cell(x, self.h, self.c, self.pr)

    def field(self, z):
        x = z[..., :self.pol.n]
        dx = self.plant.rhs(x, self.u)
        if self.cost is None:
            return dx
        c = ad.reshape(self.cost(x), np.shape(ad.value(x))[:-1] + (1,))
        return ad.concatenate([dx, c], axis=-1)

    def readout(self, z):
        return self.u


BASELINE_KINDS = ("residual_mlp", "pure_mlp", "residual_lstm", "pure_lstm")
POLICY_KINDS = ("youla",) + BASELINE_KINDS


def baseline_policy(kind, K, rng=None, **dims):
    if kind == "residual_mlp":
        return MLPPolicy(K, residual=True, rng=rng, **dims)
    if kind == "pure_mlp":
        return MLPPolicy(K, residual=False, rng=rng, **dims)
    if kind == "residual_lstm":
        return LSTMPolicy(K, residual=True, rng=rng, **dims)
    if kind == "pure_lstm":
        return LSTMPolicy(K, residual=False, rng=rng, **dims)
    raise ValueError(f"unknown policy kind {kind!r}")


def make_policy(kind, K, rng=None, **dims):
    if kind == "youla":
        return YoulaLRU(K, rng=rng, **dims)
    return baseline_policy(kind, K, rng=rng, **dims)
