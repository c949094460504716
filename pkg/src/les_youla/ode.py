"""Fixed-step RK4 integration, differentiable through the unrolled steps."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


class IntegrationError(FloatingPointError):
    def __init__(self, msg, step=None, stage=None):
        super().__init__(msg if step is None else f"step {step}: {msg}")
        self.step = step
        self.stage = stage


def _check(k, stage):
    if not np.all(np.isfinite(ad.value(k))):
        raise IntegrationError(f"non-finite value at RK4 stage {stage}", stage=stage)
    return k


def rk4_step(F, z, h):
    """One classical RK4 step ``z + h/6 (k1 + 2 k2 + 2 k3 + k4)``."""
    if not h > 0:
        raise ValueError("step size must be positive")
    k1 = _check(F(z), "k1")
    k2 = _check(F(z + (0.5 * h) * k1), "k2")
    k3 = _check(F(z + (0.5 * h) * k2), "k3")
    k4 = _check(F(z + h * k3), "k4")
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class Rollout:
    """Grid trajectory.  ``z[k]`` is the (batched) augmented state at ``t[k]``.

    ``final`` keeps the last state as returned by the integrator (a taped
    variable when differentiating); ``J_T`` is the running-cost accumulator
    (last coordinate) at ``t = N h``.
    """

    t: np.ndarray
    z: np.ndarray
    u: np.ndarray | None
    final: object

    @property
    def J_T(self):
        return np.asarray(ad.value(self.final))[..., -1]

    @property
    def h(self):
        return float(self.t[1] - self.t[0])


def rollout(F, z0, h, N, readout=None, keep=True):
    """Integrate ``N`` RK4 steps of ``F`` from ``z0``.

    ``F`` may be a plain callable or an object with ``field(z)`` and an
    optional ``begin_step(z)`` hook (called on the grid state before each
    step; used by policies that hold their output across a step).  When
    ``readout`` is given, ``u[k] = readout(z[k])`` is recorded as a plain
    array after the hook has run.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    field = getattr(F, "field", F)
    begin = getattr(F, "begin_step", None)
    z = z0
    zs = [np.array(ad.value(z), dtype=float)] if keep else []
    us = []
    for k in range(N + 1):
        if begin is not None and (k < N or readout is not None):
            begin(z)
        if readout is not None:
            us.append(np.array(ad.value(readout(z)), dtype=float))
        if k == N:
            break
        try:
            z = rk4_step(field, z, h)
        except IntegrationError as exc:
            raise IntegrationError(str(exc), step=k, stage=exc.stage) from None
        if keep:
            zs.append(ad.value(z))
    t = h * np.arange(N + 1)
    Z = np.stack(zs) if keep else None
    U = np.stack(us) if us else None
    return Rollout(t=t, z=Z, u=U, final=z)


def convergence_order(F, z0, T, h, exact):
    """Richardson order estimate ``log2(e_h / e_{h/2})`` at time ``T``.

    Returns ``(order, ratio)``; ``order`` is the string ``"exact"`` when both
    errors vanish.
    """
    errs = []
    ref = np.asarray(exact(T), dtype=float)
    # errors at round-off level count as zero (e.g. a constant field)
    floor = 64 * np.finfo(float).eps * (1.0 + float(np.max(np.abs(ref))))
    for hh in (h, h / 2):
        N = int(round(T / hh))
        zT = rollout(F, np.asarray(z0, dtype=float), hh, N, keep=False).final
        errs.append(float(np.max(np.abs(np.asarray(zT) - ref))))
    if errs[0] <= floor and errs[1] <= floor:
        return "exact", 1.0
    return float(np.log2(errs[0] / errs[1])), errs[0] / errs[1]


TRAJECTORY_HEADER = ["t", "p", "pdot", "theta", "thetadot", "u", "tip_x", "tip_y", "stage_cost"]


def write_trajectory_csv(path, t, x, u, tip, cost):
    """One row per grid point with the fixed header above."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for k in range(len(t)):
            w.writerow([repr(float(t[k]))] + [repr(float(v)) for v in x[k]]
                       + [repr(float(np.ravel(u[k])[0])), repr(float(tip[k][0])),
                          repr(float(tip[k][1])), repr(float(cost[k]))])
