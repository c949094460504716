"""Policy-gradient training through unrolled RK4 rollouts."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .lincontrol import lqr
from .ode import IntegrationError, rollout, write_trajectory_csv
from .plant import CartPole, CartPoleParams, ObstacleField, penetrations, stage_cost, tip_position
from .policy import make_policy

log = logging.getLogger(__name__)

LQR_Q = (10.0, 1.0, 100.0, 1.0)
LQR_R = 0.1


@dataclass
class TrainConfig:
    T: float = 4.0
    h: float = 0.01
    batch: int = 16
    epochs: int = 100
    lr: float = 5e-3
    sigma0: float = 0.05
    seed: int = 0
    policy: str = "youla"
    x0_mean: tuple = (-1.0, 0.0, 0.0, 0.0)
    eval_x0: tuple = (-1.0, 0.0, 0.0, 0.0)
    hurwitz_every: int = 10
    policy_dims: dict = field(default_factory=dict)
    plant: CartPoleParams = field(default_factory=CartPoleParams)
    obstacles: ObstacleField = field(default_factory=ObstacleField)
    lqr_q: tuple = LQR_Q
    lqr_r: float = LQR_R

    @property
    def steps(self):
        N = int(round(self.T / self.h))
        if N < 1 or abs(N * self.h - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"T = {self.T} is not an integer multiple of h = {self.h}")
        return N

    def validate(self):
        self.steps
        if self.batch < 1 or self.epochs < 1:
            raise ValueError("batch and epochs must be >= 1")
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be > 0")
        return self


@dataclass
class LearningCurve:
    mean: list = field(default_factory=list)
    min: list = field(default_factory=list)
    max: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    flagged: list = field(default_factory=list)

    def __len__(self):
        return len(self.mean)

    def append(self, costs, seconds, flagged=False):
        costs = np.asarray(costs, dtype=float)
        if flagged or not np.all(np.isfinite(costs)):
            self.mean.append(np.inf)
            self.min.append(np.inf)
            self.max.append(np.inf)
            flagged = True
        else:
            self.mean.append(float(np.mean(costs)))
            self.min.append(float(np.min(costs)))
            self.max.append(float(np.max(costs)))
        self.seconds.append(seconds)
        self.flagged.append(bool(flagged))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mean_cost", "min_cost", "max_cost"])
            for k in range(len(self)):
                w.writerow([k + 1, repr(self.mean[k]), repr(self.min[k]), repr(self.max[k])])


def sample_init(batch, sigma0, rng, mean=None, n=4):
    """``batch`` i.i.d. draws of ``N(mean, sigma0^2 I)``."""
    if not sigma0 > 0:
        raise ValueError("sigma0 must be > 0")
    mean = np.zeros(n) if mean is None else np.asarray(mean, dtype=float)
    return mean + sigma0 * rng.standard_normal((batch, n))


def truncated_cost(ro):
    """Running-cost accumulator at ``t = T`` (one value per trajectory)."""
    return ro.J_T


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, d):
        return cls(np.zeros(d), np.zeros(d), 0)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam.  Returns ``(params, state, skipped)``.

    Non-finite gradients leave both params and state untouched.
    """
    grads = np.asarray(grads, dtype=float)
    if grads.shape != np.shape(params):
        raise ValueError("gradient / parameter size mismatch")
    if not np.all(np.isfinite(grads)):
        return params, state, True
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grads
    v = beta2 * state.v + (1 - beta2) * grads * grads
    mhat = m / (1 - beta1 ** t)
    vhat = v / (1 - beta2 ** t)
    return params - lr * mhat / (np.sqrt(vhat) + eps), AdamState(m, v, t), False


class Experiment:
    """Plant, cost, LQR gain and policy for one config."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg.validate()
        self.plant = CartPole(cfg.plant)
        A, B = self.plant.linearize()
        self.lqr = lqr(A, B, np.diag(cfg.lqr_q), np.atleast_2d(cfg.lqr_r))
        self.K = self.lqr.K
        self.policy = make_policy(cfg.policy, self.K, rng=np.random.default_rng([cfg.seed, 0]),
                                  **cfg.policy_dims)

    def cost(self, x):
        return stage_cost(x, self.cfg.obstacles, self.cfg.plant)

    def simulate(self, flat, x0, T=None, readout=False, keep=True):
        cfg = self.cfg
        N = cfg.steps if T is None else int(round(T / cfg.h))
        pr = self.policy.params(flat)
        z0 = self.policy.initial_state(x0, pr)
        loop = self.policy.closed_loop(self.plant, pr, self.cost)
        return rollout(loop, z0, cfg.h, N, readout=loop.readout if readout else None, keep=keep)

    def batch_loss(self, x0, stats=None):
        def loss(theta):
            ro = self.simulate(theta, x0, keep=False)
            J = ro.final[..., -1]
            if stats is not None:
                stats["costs"] = np.array(ad.value(J))
            return ad.mean(J)
        return loss


def structural_hurwitz(exp, flat):
    """Closed-loop Jacobian test for structurally stable policies, else ``None``."""
    if not exp.policy.structural:
        return None
    from .verify import closed_loop_jacobian
    from .lincontrol import is_hurwitz
    return bool(is_hurwitz(closed_loop_jacobian(exp.policy, exp.plant, flat)))


@dataclass
class TrainResult:
    params: np.ndarray
    curve: LearningCurve
    hurwitz_checks: dict
    experiment: Experiment
    final_hurwitz: bool | None = None


def train(cfg: TrainConfig, out_dir=None, progress=None):
    """Run ``cfg.epochs`` epochs of batched policy-gradient descent with Adam."""
    exp = Experiment(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    flat = exp.policy.store.values.copy()
    state = AdamState.zeros(flat.size)
    curve = LearningCurve()
    checks = {}
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        x0 = sample_init(cfg.batch, cfg.sigma0, rng, cfg.x0_mean)
        stats = {}
        flagged = False
        try:
            _, g = ad.grad(exp.batch_loss(x0, stats), flat)
        except (ad.NonFiniteError, IntegrationError) as exc:
            log.info("epoch %d flagged: %s", epoch, exc)
            flagged = True
        if not flagged:
            flat, state, flagged = adam_step(flat, g, state, cfg.lr)
        curve.append(stats.get("costs", [np.inf]), time.perf_counter() - t0, flagged)
        if exp.policy.structural and (epoch % cfg.hurwitz_every == 0 or epoch == cfg.epochs):
            checks[epoch] = structural_hurwitz(exp, flat)
        if progress is not None:
            progress(epoch, curve)
    res = TrainResult(flat, curve, checks, exp, structural_hurwitz(exp, flat))
    if out_dir is not None:
        write_run(res, out_dir)
    return res


def checkpoint_dict(res: TrainResult):
    exp = res.experiment
    pol = exp.policy
    store = pol.store.with_values(res.params)
    return {
        "kind": pol.kind,
        "dims": {"n": pol.n, "m": pol.m, **exp.cfg.policy_dims,
                 **({"n_q": pol.n_q} if pol.kind == "youla" else {})},
        "n_params": pol.n_params,
        "K": exp.K.tolist(),
        "params": store.to_dict(),
        "seed": exp.cfg.seed,
        "final_hurwitz": res.final_hurwitz,
        "flagged_epochs": [k + 1 for k, f in enumerate(res.curve.flagged) if f],
    }


def load_checkpoint(path, cfg: TrainConfig):
    """Rebuild ``(Experiment, flat params)`` from ``checkpoint.json``."""
    data = json.loads(Path(path).read_text())
    cfg = TrainConfig(**{**asdict_shallow(cfg), "policy": data["kind"]})
    exp = Experiment(cfg)
    store = exp.policy.store
    flat = store.values.copy()
    for name, arr in data["params"].items():
        flat[store.slice_of(name)] = np.ravel(np.asarray(arr, dtype=float))
    return exp, flat


def asdict_shallow(cfg):
    return {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}


def evaluate(exp: Experiment, flat, x0=None, T=None):
    """Untaped rollout from one initial state with inputs, tip path and costs."""
    x0 = np.asarray(exp.cfg.eval_x0 if x0 is None else x0, dtype=float)
    ro = exp.simulate(flat, x0[None, :], T=T, readout=True)
    xs = ro.z[:, 0, :exp.policy.n]
    cost = np.asarray(exp.cost(xs))
    return {
        "rollout": ro,
        "x": xs,
        "u": ro.u[:, 0, :],
        "tip": np.asarray(tip_position(xs, exp.cfg.plant.L)),
        "stage_cost": cost,
        "J_T": float(ro.J_T[0]),
        "penetrations": penetrations(xs, exp.cfg.obstacles, exp.cfg.plant),
    }


def write_run(res: TrainResult, out_dir):
    out = Path(out_dir)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    res.curve.write_csv(out / "curve.csv")
    (out / "checkpoint.json").write_text(json.dumps(checkpoint_dict(res), indent=1))
    from .config import dump_train_config
    (out / "config.resolved.toml").write_text(dump_train_config(res.experiment.cfg))
    ev = evaluate(res.experiment, res.params)
    write_trajectory_csv(out / "trajectories" / "nominal.csv", ev["rollout"].t, ev["x"],
                         ev["u"], ev["tip"], ev["stage_cost"])
    summary = {
        "policy": res.experiment.policy.kind,
        "seed": res.experiment.cfg.seed,
        "final_mean_cost": res.curve.mean[-1],
        "best_mean_cost": float(np.min(res.curve.mean)),
        "hurwitz": res.final_hurwitz,
        "hurwitz_checks": {str(k): v for k, v in res.hurwitz_checks.items()},
        "nominal_J_T": ev["J_T"],
        "obstacle_violations": ev["penetrations"],
        "flagged_epochs": sum(res.curve.flagged),
        "train_seconds": float(sum(res.curve.seconds)),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary
