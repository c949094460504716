"""Experiment configuration: one TOML file of flat tables.

Every key has a default; unknown tables or keys are rejected.  The resolved
configuration is echoed into each run directory so that the run can be
reproduced from it alone.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import tomli

from .plant import CartPoleParams, ObstacleField
from .training import LQR_Q, LQR_R, TrainConfig


class ConfigError(ValueError):
    pass


POLICY_KEYS = {
    "youla": ("n_q", "readout_hidden", "init_hidden", "out_scale"),
    "residual_mlp": ("hidden", "out_scale"),
    "pure_mlp": ("hidden", "out_scale"),
    "residual_lstm": ("hidden", "out_scale"),
    "pure_lstm": ("hidden", "out_scale"),
}


@dataclass
class VerifyOptions:
    draws: int = 100
    floor: float = 0.05
    decay_radius: float = 0.05
    decay_T: float = 10.0
    tail_p: float = 2.0


@dataclass
class ExperimentConfig:
    plant: CartPoleParams = field(default_factory=CartPoleParams)
    obstacles: ObstacleField = field(default_factory=ObstacleField)
    lqr_Q: tuple = LQR_Q
    lqr_R: float = LQR_R
    lqr_A: list | None = None
    lqr_B: list | None = None
    policy: str = "youla"
    policy_dims: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    verify: VerifyOptions = field(default_factory=VerifyOptions)
    output_dir: str = field(default_factory=lambda: os.environ.get("RUN_DIR", "runs"))

    def train_config(self, **overrides):
        cfg = replace(self.train, policy=self.policy, policy_dims=dict(self.policy_dims),
                      plant=self.plant, obstacles=self.obstacles,
                      lqr_q=tuple(self.lqr_Q), lqr_r=self.lqr_R)
        return replace(cfg, **overrides)


def _take(table, name, cls, skip=()):
    allowed = {f.name for f in fields(cls)} - set(skip)
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    out = {}
    for k, v in table.items():
        out[k] = tuple(tuple(c) for c in v) if k == "centers" else (
            tuple(v) if isinstance(v, list) else v)
    return out


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    known = {"plant", "obstacles", "lqr", "policy", "train", "verify", "output"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown table(s): {', '.join(sorted(unknown))}")
    cfg = ExperimentConfig()
    try:
        if "plant" in data:
            cfg.plant = CartPoleParams(**_take(data["plant"], "plant", CartPoleParams))
        if "obstacles" in data:
            cfg.obstacles = ObstacleField(**_take(data["obstacles"], "obstacles", ObstacleField))
        if "lqr" in data:
            lq = dict(data["lqr"])
            unknown = set(lq) - {"Q", "R", "A", "B"}
            if unknown:
                raise ConfigError(f"unknown key(s) in [lqr]: {', '.join(sorted(unknown))}")
            cfg.lqr_Q = tuple(lq.get("Q", cfg.lqr_Q))
            cfg.lqr_R = float(lq.get("R", cfg.lqr_R))
            cfg.lqr_A, cfg.lqr_B = lq.get("A"), lq.get("B")
        if "policy" in data:
            pol = dict(data["policy"])
            cfg.policy = pol.pop("kind", cfg.policy)
            if cfg.policy not in POLICY_KEYS:
                raise ConfigError(f"unknown policy kind {cfg.policy!r}")
            bad = set(pol) - set(POLICY_KEYS[cfg.policy])
            if bad:
                raise ConfigError(f"unknown key(s) in [policy] for {cfg.policy}: "
                                  f"{', '.join(sorted(bad))}")
            cfg.policy_dims = {k: tuple(v) if isinstance(v, list) else v for k, v in pol.items()}
        if "train" in data:
            cfg.train = TrainConfig(**_take(
                data["train"], "train", TrainConfig,
                skip=("policy", "policy_dims", "plant", "obstacles", "lqr_q", "lqr_r")))
            cfg.train.validate()
        if "verify" in data:
            cfg.verify = VerifyOptions(**_take(data["verify"], "verify", VerifyOptions))
        if "output" in data:
            out = dict(data["output"])
            if set(out) - {"dir"}:
                raise ConfigError("unknown key(s) in [output]")
            cfg.output_dir = out.get("dir", cfg.output_dir)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return parse_config(Path(path).read_text())


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v) if isinstance(v, int) else repr(float(v))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def _table(name, items):
    lines = [f"[{name}]"]
    lines += [f"{k} = {_toml_value(v)}" for k, v in items if v is not None]
    return "\n".join(lines)


def dump_config(cfg: ExperimentConfig) -> str:
    tc = cfg.train
    train_items = [(f.name, getattr(tc, f.name)) for f in fields(TrainConfig)
                   if f.name not in ("policy", "policy_dims", "plant", "obstacles",
                                     "lqr_q", "lqr_r")]
    blocks = [
        _table("plant", [(f.name, getattr(cfg.plant, f.name)) for f in fields(CartPoleParams)]),
        _table("obstacles", [(f.name, getattr(cfg.obstacles, f.name))
                             for f in fields(ObstacleField)]),
        _table("lqr", [("Q", cfg.lqr_Q), ("R", cfg.lqr_R), ("A", cfg.lqr_A), ("B", cfg.lqr_B)]),
        _table("policy", [("kind", cfg.policy)] + sorted(cfg.policy_dims.items())),
        _table("train", train_items),
        _table("verify", [(f.name, getattr(cfg.verify, f.name)) for f in fields(VerifyOptions)]),
        _table("output", [("dir", str(cfg.output_dir))]),
    ]
    return "\n\n".join(blocks) + "\n"


def from_train_config(tc: TrainConfig) -> ExperimentConfig:
    return ExperimentConfig(plant=tc.plant, obstacles=tc.obstacles, lqr_Q=tuple(tc.lqr_q),
                            lqr_R=tc.lqr_r, policy=tc.policy, policy_dims=dict(tc.policy_dims),
                            train=tc)


def dump_train_config(tc: TrainConfig) -> str:
    return dump_config(from_train_config(tc))
