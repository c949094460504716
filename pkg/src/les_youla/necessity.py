"""Rewrite a locally stabilizing controller as a Youla-residual Q-policy.

Given ``C: x_c' = f_c(x_c, x), u = h_c(x_c, x)`` the Q-policy uses
``q = (q1, q2)`` with ``q1`` in R^n, ``q2`` in R^{n_c}, ``eta = q1 + (x - xhat)``
and

    f_q = [f(eta) - s(x - xhat) + g(eta) h_c(q2, eta);  f_c(q2, eta)]
    h_q = -K q1 + h_c(q2, eta)

Started from ``xhat(0) = q1(0)`` and ``q2(0) = x_c(0)`` it reproduces the
input trajectory of ``C`` exactly (``xhat - q1`` stays at zero).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .lincontrol import hurwitz_test
from .ode import rollout
from .policy import GenericCController, GenericQPolicy, fd_jacobian


class PreconditionError(ValueError):
    def __init__(self, condition, msg):
        super().__init__(f"condition {condition}: {msg}")
        self.condition = condition


def default_s(zeta):
    return -zeta


@dataclass
class NecessityTransform:
    source: GenericCController
    s: object
    K: np.ndarray
    result: GenericQPolicy
    n: int

    def initial_state(self, x0, xhat0=None, xc0=None):
        """``(x0, xhat0, q1 = xhat0, q2 = x_c0)``; ``xhat0`` defaults to ``x0``."""
        x0 = np.asarray(x0, dtype=float)
        xh0 = x0.copy() if xhat0 is None else np.asarray(xhat0, dtype=float)
        xc0 = self.source.x_c0 if xc0 is None else np.asarray(xc0, dtype=float)
        return np.concatenate([x0, xh0, xh0, np.reshape(xc0, -1)])


def necessity_transform(C: GenericCController, plant, K, s=default_s, check=True):
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n, nc = plant.n, C.n_c
    if check:
        A, B = plant.linearize()
        v = hurwitz_test(A + B @ K)
        if not v:
            raise PreconditionError("i", f"A + BK is not Hurwitz ({v.reason})")
        s0 = np.asarray(s(np.zeros(n)))
        if np.max(np.abs(s0)) > 1e-12:
            raise PreconditionError("ii", "s(0) != 0")
        v = hurwitz_test(fd_jacobian(s, np.zeros(n)))
        if not v:
            raise PreconditionError("ii", f"ds/dzeta(0) is not Hurwitz ({v.reason})")

    def split(q):
        return q[..., :n], q[..., n:n + nc]

    def f_q(q, xh, x):
        q1, q2 = split(q)
        e = x - xh
        eta = q1 + e
        top = plant.f(eta) - s(e) + plant.g_times(eta, C.h_c(q2, eta))
        if nc == 0:
            return top
        return ad.concatenate([top, C.f_c(q2, eta)], axis=-1)

    def h_q(q, xh, x):
        q1, q2 = split(q)
        eta = q1 + (x - xh)
        return -(q1 @ K.T) + C.h_c(q2, eta)

    Q = GenericQPolicy(s=s, f_q=f_q, h_q=h_q, K=K, n=n, n_q=n + nc)
    return NecessityTransform(source=C, s=s, K=K, result=Q, n=n)


def equivalence_check(tr: NecessityTransform, plant, x0, T=5.0, h=0.01, xhat0=None,
                      q1_offset=None):
    """Simulate ``C`` and its transform on one RK4 grid and compare.

    ``q1_offset`` perturbs ``q1(0)`` away from ``xhat(0)`` (a negative control).
    Returns the max input deviation, max state deviation and max ``|xhat - q1|``.
    """
    C, Q, n = tr.source, tr.result, tr.n
    N = int(round(T / h))
    x0 = np.asarray(x0, dtype=float)
    zc0 = np.concatenate([x0, np.reshape(C.x_c0, -1)])
    zq0 = tr.initial_state(x0, xhat0)
    if q1_offset is not None:
        zq0[2 * n:3 * n] += q1_offset
    roC = rollout(C.closed_loop_field(plant), zc0, h, N,
                  readout=lambda z: C.input_of(z, n))
    roQ = rollout(Q.closed_loop_field(plant), zq0, h, N, readout=Q.input_of)
    du = np.max(np.abs(roC.u - roQ.u))
    dx = np.max(np.abs(roC.z[:, :n] - roQ.z[:, :n]))
    dxc = np.max(np.abs(roC.z[:, n:] - roQ.z[:, 3 * n:]), initial=0.0)
    d = np.max(np.abs(roQ.z[:, n:2 * n] - roQ.z[:, 2 * n:3 * n]))
    return {"max_input_deviation": float(du), "max_state_deviation": float(max(dx, dxc)),
            "max_xhat_q1_gap": float(d), "steps": N}


def linear_controller(K, Ac=None, Bc=None, Cc=None, xc0=None):
    """``u = K x`` (static) or ``x_c' = Ac x_c + Bc x, u = K x + Cc x_c``."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if Ac is None:
        return GenericCController(f_c=None, h_c=lambda xc, x: x @ K.T, n_c=0)
    Ac, Bc, Cc = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (Ac, Bc, Cc))
    nc = Ac.shape[0]
    return GenericCController(
        f_c=lambda xc, x: xc @ Ac.T + x @ Bc.T,
        h_c=lambda xc, x: x @ K.T + xc @ Cc.T,
        n_c=nc,
        x_c0=np.zeros(nc) if xc0 is None else np.asarray(xc0, dtype=float),
    )
