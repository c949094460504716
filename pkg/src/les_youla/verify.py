"""Post-hoc stability checks: closed-loop Jacobians, decay fits, tail bounds.

The Jacobians here are central finite differences of the untaped vector
field, so they do not share a code path with the autodiff gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .lincontrol import is_hurwitz
from .policy import FD_STEP, GenericQPolicy, YoulaLRU, fd_jacobian


class NotEquilibriumError(ValueError):
    pass


def augmented_field(policy, plant, flat=None):
    """Closed-loop field over ``(x, xhat, q_re, q_im)`` without the cost coordinate."""
    if isinstance(policy, GenericQPolicy):
        return policy.closed_loop_field(plant), 2 * policy.n + policy.n_q
    if callable(policy) and not hasattr(policy, "closed_loop"):
        return policy, None
    loop = policy.closed_loop(plant, policy.params(flat), cost=None)
    return loop.field, policy.state_dim()


def closed_loop_jacobian(policy, plant, flat=None, step=FD_STEP, dim=None, tol=1e-10):
    F, d = augmented_field(policy, plant, flat)
    d = dim if d is None else d
    F0 = np.asarray(F(np.zeros(d)))
    if np.max(np.abs(F0)) > tol:
        raise NotEquilibriumError(f"not an equilibrium: |F(0)| = {np.max(np.abs(F0)):.3e}")
    return fd_jacobian(F, np.zeros(d), step)


def random_youla_params(policy: YoulaLRU, rng, scale=0.5, floor=0.05):
    """Entries ~ N(0, scale^2); ``|mu_xhat|`` and ``|mu_re|`` pushed up to ``floor``."""
    flat = rng.normal(0.0, scale, size=policy.n_params)
    for name in ("mu_xhat", "mu_re"):
        sl = policy.store.slice_of(name)
        mu = flat[sl]
        flat[sl] = np.where(mu < 0, -1.0, 1.0) * np.maximum(np.abs(mu), floor)
    return flat


def structural_pass_rate(policy: YoulaLRU, plant, draws=100, rng=None, floor=0.05):
    rng = np.random.default_rng(0) if rng is None else rng
    ok = 0
    for _ in range(draws):
        flat = random_youla_params(policy, rng, floor=floor)
        ok += bool(is_hurwitz(closed_loop_jacobian(policy, plant, flat)))
    return ok / draws


@dataclass
class DecayFit:
    k: float
    lam: float
    window: tuple
    residual: float
    x0_norm: float

    def envelope(self, t):
        return self.k * self.x0_norm * np.exp(-self.lam * np.asarray(t))


def fit_decay(t, norms, window=None, x0_norm=None):
    """Least-squares line through ``(t, log |x(t)|)`` on ``window``.

    Slope gives ``-lam``; intercept gives ``log(k |x(0)|)``.  The default
    window is the final half of the trajectory.
    """
    t = np.asarray(t, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if window is None:
        window = (t[0] + 0.5 * (t[-1] - t[0]), t[-1])
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    if sel.sum() < 2:
        raise ValueError("decay window holds fewer than two samples")
    if np.any(norms[sel] <= 0) or not np.all(np.isfinite(norms[sel])):
        raise ValueError("norms must be positive and finite on the decay window")
    y = np.log(norms[sel])
    slope, icpt = np.polyfit(t[sel], y, 1)
    resid = float(np.sqrt(np.mean((slope * t[sel] + icpt - y) ** 2)))
    x0 = float(norms[0]) if x0_norm is None else float(x0_norm)
    return DecayFit(k=float(np.exp(icpt) / x0), lam=float(-slope),
                    window=(float(window[0]), float(window[1])), residual=resid, x0_norm=x0)


def tail_bound_check(t, x_norms, u_norms, stage, p, M, T_cut, gamma=None,
                     fit_x=None, fit_u=None, tail=None, rtol=1e-9):
    """Compare the accumulated tail cost after ``T_cut`` with the exponential bound.

    The bound is ``M (A^p + B^p) / (p gamma) exp(-p gamma T_cut)``.  ``gamma``
    defaults to the slower of the fitted rates; ``A`` and ``B`` are the
    smallest constants with ``|x(t)| <= A exp(-gamma t)`` (resp. ``u``) on the
    sampled tail.  ``tail`` overrides the Simpson integral of ``stage``.
    """
    t = np.asarray(t, dtype=float)
    sel = t >= T_cut - 1e-12
    xs, us, ls = (np.asarray(a, dtype=float)[sel] for a in (x_norms, u_norms, stage))
    report = {"p": p, "M": M, "T_cut": float(T_cut)}
    cap = M * (xs ** p + us ** p)
    bad = np.nonzero(ls > cap * (1 + rtol) + 1e-300)[0]
    if bad.size:
        report.update(pointwise_ok=False, passed=None,
                      violation={"t": float(t[sel][bad[0]]), "stage": float(ls[bad[0]]),
                                 "cap": float(cap[bad[0]])})
        return report
    if gamma is None:
        rates = [f.lam for f in (fit_x, fit_u) if f is not None]
        if np.max(us, initial=0.0) == 0.0 and fit_x is not None:
            rates = [fit_x.lam]
        gamma = min(rates)
    if not gamma > 0:
        report.update(pointwise_ok=True, passed=False, reason="non-positive decay rate")
        return report
    ts = t[sel]
    A = float(np.max(xs * np.exp(gamma * ts), initial=0.0))
    B = float(np.max(us * np.exp(gamma * ts), initial=0.0))
    bound = M * (A ** p + B ** p) / (p * gamma) * np.exp(-p * gamma * T_cut)
    actual = float(simpson(ls, x=ts)) if tail is None else float(tail)
    report.update(pointwise_ok=True, gamma=float(gamma), A=A, B=B, bound=float(bound),
                  actual=actual, passed=bool(actual <= bound))
    return report


def empirical_radius(converges, radii, draws=20, rng=None, n=4):
    """Largest radius in ``radii`` whose sampled initial states all converge.

    ``converges(x0)`` returns True/False for one initial state.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    best = 0.0
    for r in sorted(radii):
        for _ in range(draws):
            v = rng.normal(size=n)
            if not converges(r * v / np.linalg.norm(v)):
                return best
        best = r
    return best


def decay_tail_report(exp, flat, x0, T=10.0, p=2.0, T_cut=None):
    """Roll out a trained policy with the obstacle term switched off, fit the
    decay of ``|x|`` and ``|u|`` on the final half and check the tail bound.

    With ``gamma2 = 0`` the stage cost is ``gamma1 |x|^2`` so ``M = gamma1``
    bounds it pointwise for ``p = 2``.
    """
    from dataclasses import replace
    from .training import Experiment, evaluate

    cfg = exp.cfg
    quiet = Experiment(replace(cfg, obstacles=replace(cfg.obstacles, gamma2=0.0)))
    ev = evaluate(quiet, flat, x0=x0, T=T)
    t = ev["rollout"].t
    xn = np.linalg.norm(ev["x"], axis=-1)
    un = np.linalg.norm(ev["u"], axis=-1)
    T_cut = t[-1] / 2 if T_cut is None else T_cut
    fx = fit_decay(t, xn, window=(T_cut, t[-1]), x0_norm=xn[0])
    fu = fit_decay(t, un, window=(T_cut, t[-1]), x0_norm=un[0]) if np.all(un[t >= T_cut] > 0) else None
    tail = tail_bound_check(t, xn, un, ev["stage_cost"], p=p, M=cfg.obstacles.gamma1,
                            T_cut=T_cut, fit_x=fx, fit_u=fu)
    return {
        "x0": [float(v) for v in np.ravel(x0)],
        "x0_norm": float(xn[0]),
        "final_norm": float(xn[-1]),
        "decay_x": {"k": fx.k, "lambda": fx.lam, "window": list(fx.window), "residual": fx.residual},
        "decay_u": None if fu is None else {"k": fu.k, "lambda": fu.lam, "window": list(fu.window),
                                            "residual": fu.residual},
        "tail": tail,
    }
