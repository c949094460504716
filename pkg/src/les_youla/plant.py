"""Input-affine plants and the cart-pendulum obstacle task.

State layout for the cart-pendulum is ``(p, pdot, theta, thetadot)`` with
``theta = 0`` upright.  All functions accept row-stacked states of shape
``(..., 4)`` and work on both plain arrays and taped variables.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


class EquilibriumError(ValueError):
    pass


class InputAffinePlant:
    """``xdot = f(x) + g(x) u`` with ``f(0) = 0``.

    Subclasses provide ``f`` and ``g``; ``g`` returns shape ``(..., n, m)``.
    """

    n: int
    m: int

    def __init__(self, f=None, g=None, n=None, m=None):
        if f is not None:
            self.f = f
        if g is not None:
            self.g = g
        if n is not None:
            self.n, self.m = n, m

    def f(self, x):
        raise NotImplementedError

    def g(self, x):
        raise NotImplementedError

    def g_times(self, x, u):
        """``g(x) u`` for batched ``u`` of shape ``(..., m)``."""
        gx = self.g(x)
        out = gx[..., :, 0] * u[..., 0:1]
        for j in range(1, self.m):
            out = out + gx[..., :, j] * u[..., j:j + 1]
        return out

    def rhs(self, x, u):
        return self.f(x) + self.g_times(x, u)

    def linearize(self, step=1e-6, tol=1e-10):
        """``(A, B)`` at the origin: closed form if available, else central differences."""
        f0 = np.asarray(self.f(np.zeros(self.n)), dtype=float)
        if np.max(np.abs(f0)) > tol:
            raise EquilibriumError("f(0) != 0; shift the equilibrium to the origin first")
        A = self.jacobian_at_origin(step) if not hasattr(self, "closed_form_A") else self.closed_form_A()
        B = np.asarray(self.g(np.zeros(self.n)), dtype=float).reshape(self.n, self.m)
        return A, B

    def jacobian_at_origin(self, step=1e-6):
        A = np.zeros((self.n, self.n))
        for j in range(self.n):
            e = np.zeros(self.n)
            e[j] = step
            A[:, j] = (np.asarray(self.f(e)) - np.asarray(self.f(-e))) / (2 * step)
        return A


@dataclass(frozen=True)
class CartPoleParams:
    M: float = 1.0      # cart mass [kg]
    m: float = 0.1      # pendulum mass [kg]
    L: float = 1.0      # pendulum length [m]
    b: float = 0.1      # cart friction [N s/m]
    grav: float = 9.81  # [m/s^2]

    def __post_init__(self):
        for k in ("M", "m", "L", "b", "grav"):
            if not getattr(self, k) > 0:
                raise ValueError(f"CartPoleParams.{k} must be > 0")


def cartpole_f(x, p: CartPoleParams):
    pd, th, thd = x[..., 1], x[..., 2], x[..., 3]
    s, c = ad.sin(th), ad.cos(th)
    den = p.M + p.m * (s * s)
    thd2 = thd * thd
    acc = (p.m * p.L * s * thd2 + p.m * p.grav * s * c - p.b * pd) / den
    alpha = ((p.M + p.m) * p.grav * s - p.m * p.L * c * s * thd2 + p.b * pd * c) / (p.L * den)
    return ad.stack([pd, acc, thd, alpha], axis=-1)


def cartpole_g(x, p: CartPoleParams):
    """Input column, shape ``(..., 4, 1)``.  Depends on ``theta`` only."""
    th = x[..., 2]
    s, c = ad.sin(th), ad.cos(th)
    den = p.M + p.m * (s * s)
    col = ad.stack([0.0 * den, 1.0 / den, 0.0 * den, -c / (p.L * den)], axis=-1)
    return ad.reshape(col, np.shape(ad.value(col)) + (1,))


class CartPole(InputAffinePlant):
    n = 4
    m = 1

    def __init__(self, params: CartPoleParams | None = None):
        self.params = params or CartPoleParams()

    def f(self, x):
        return cartpole_f(x, self.params)

    def g(self, x):
        return cartpole_g(x, self.params)

    def g_times(self, x, u):
        p = self.params
        th = x[..., 2]
        s, c = ad.sin(th), ad.cos(th)
        den = p.M + p.m * (s * s)
        v = u[..., 0] / den
        zero = 0.0 * v
        return ad.stack([zero, v, zero, -(c * v) / p.L], axis=-1)

    def rhs(self, x, u):
        # one shared sin/cos/denominator evaluation for f and g u
        p = self.params
        pd, th, thd = x[..., 1], x[..., 2], x[..., 3]
        s, c = ad.sin(th), ad.cos(th)
        den = p.M + p.m * (s * s)
        thd2 = thd * thd
        uu = u[..., 0]
        acc = (p.m * p.L * s * thd2 + p.m * p.grav * s * c - p.b * pd + uu) / den
        alpha = ((p.M + p.m) * p.grav * s - p.m * p.L * c * s * thd2 + p.b * pd * c
                 - c * uu) / (p.L * den)
        return ad.stack([pd, acc, thd, alpha], axis=-1)

    def closed_form_A(self):
        p = self.params
        return np.array([
            [0.0, 1.0, 0.0, 0.0],
            [0.0, -p.b / p.M, p.grav * p.m / p.M, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, p.b / (p.M * p.L), p.grav * (p.M + p.m) / (p.M * p.L), 0.0],
        ])


def linearize(plant: InputAffinePlant):
    return plant.linearize()


def tip_position(x, L):
    """Pendulum tip ``(p + L sin(theta), L cos(theta))``, shape ``(..., 2)``."""
    th = x[..., 2]
    return ad.stack([x[..., 0] + L * ad.sin(th), L * ad.cos(th)], axis=-1)


@dataclass(frozen=True)
class ObstacleField:
    centers: tuple = ((-1.0, 0.55), (-0.8, 1.12))
    R: float = 0.18
    eps_safe: float = 0.05
    beta: float = 1.0
    kappa: float = 10.0
    gamma1: float = 1.0
    gamma2: float = 2000.0
    smooth: float = 1e-9  # distance smoothing near a center

    def __post_init__(self):
        if not (self.R > 0 and self.eps_safe > 0 and self.beta > 0 and self.kappa > 0):
            raise ValueError("R, eps_safe, beta, kappa must be > 0")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("cost weights must be >= 0")


def obstacle_penalty(d, field: ObstacleField):
    """Piecewise penalty: 0 outside ``R + eps``, quadratic in the margin, exponential inside."""
    R, eps = field.R, field.eps_safe
    dv = np.asarray(ad.value(d))
    margin = R + eps - d
    quad = margin * margin
    inside = eps * eps + field.beta * (ad.exp(field.kappa * (R - d)) - 1.0)
    return ad.where(dv >= R + eps, 0.0 * d, ad.where(dv >= R, quad, inside))


def obstacle_distances(x, field: ObstacleField, L):
    tip = tip_position(x, L)
    tx, ty = tip[..., 0], tip[..., 1]
    out = []
    for cx, cy in field.centers:
        dx, dy = tx - cx, ty - cy
        out.append(ad.sqrt(dx * dx + dy * dy + field.smooth ** 2))
    return out


def stage_cost(x, field: ObstacleField, params: CartPoleParams):
    """``gamma1 x'x + gamma2 * sum_i penalty(d_i)``; no input penalty."""
    cost = field.gamma1 * ad.sum_(x * x, axis=-1)
    if field.gamma2 == 0:
        return cost
    pen = None
    for d in obstacle_distances(x, field, params.L):
        phi = obstacle_penalty(d, field)
        pen = phi if pen is None else pen + phi
    return cost + field.gamma2 * pen


def penetrations(xs, field: ObstacleField, params: CartPoleParams):
    """Number of grid points where the tip is strictly inside an obstacle."""
    ds = obstacle_distances(np.asarray(xs), field, params.L)
    return int(sum(np.sum(d < field.R) for d in ds))
