"""Command-line front end.

    les-youla [--config FILE] lqr
    les-youla [--config FILE] train [--policy KIND] [--seed N | --seeds 0-4] [--epochs N] [--out DIR]
    les-youla [--config FILE] eval RUN_DIR [--x0 a,b,c,d] [--T SEC]
    les-youla [--config FILE] verify les [--checkpoint FILE] [--draws N]
    les-youla [--config FILE] verify necessity [--draws N]
    les-youla compare RUN_DIR... [--out FILE]

Exit status: 0 success, 1 usage or parse error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import ConfigError, dump_config, load_config
from .lincontrol import (ConvergenceError, LyapunovError, NotStabilizableError, hurwitz_test,
                         care_residual, lqr)
from .necessity import PreconditionError, equivalence_check, linear_controller, necessity_transform
from .ode import IntegrationError, write_trajectory_csv
from .plant import CartPole, EquilibriumError
from .training import Experiment, evaluate, load_checkpoint, train
from .verify import NotEquilibriumError, decay_tail_report, structural_pass_rate

log = logging.getLogger("les_youla")

NUMERICAL = (NotStabilizableError, ConvergenceError, LyapunovError, IntegrationError,
             ad.NonFiniteError, NotEquilibriumError, PreconditionError, EquilibriumError,
             np.linalg.LinAlgError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(obj):
    print(json.dumps(obj, indent=1, default=_jsonable))


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _seed_list(text):
    out = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part.strip():
            out.append(int(part))
    if not out:
        raise UsageError(f"empty seed list {text!r}")
    return out


# -- lqr ---------------------------------------------------------------------

def cmd_lqr(cfg, args):
    if cfg.lqr_A is not None or cfg.lqr_B is not None:
        if cfg.lqr_A is None or cfg.lqr_B is None:
            raise ConfigError("[lqr] needs both A and B when either is given")
        A = np.atleast_2d(np.asarray(cfg.lqr_A, dtype=float))
        B = np.asarray(cfg.lqr_B, dtype=float).reshape(A.shape[0], -1)
    else:
        A, B = CartPole(cfg.plant).linearize()
    Qw = np.diag(np.asarray(cfg.lqr_Q, dtype=float))
    if Qw.shape[0] != A.shape[0]:
        raise ConfigError(f"[lqr] Q has {Qw.shape[0]} entries, state dimension is {A.shape[0]}")
    Rw = np.atleast_2d(cfg.lqr_R) * np.eye(B.shape[1])
    res = lqr(A, B, Qw, Rw)
    verdict = hurwitz_test(A + B @ res.K)
    _emit({
        "K": res.K,
        "P": res.P,
        "hurwitz": verdict.hurwitz,
        "closed_loop_eigenvalues": [[float(z.real), float(z.imag)]
                                    for z in np.linalg.eigvals(A + B @ res.K)],
        "care_residual": care_residual(A, B, Qw, Rw, res.P),
        "iterations": res.iterations,
    })
    return 0


# -- train -------------------------------------------------------------------

def run_dir(root, policy, seed):
    return Path(root) / policy / f"seed{seed}"


def write_envelope(curves, path):
    """Per-epoch mean/min/max of the per-seed mean cost."""
    E = min(len(c) for c in curves)
    M = np.array([c.mean[:E] for c in curves])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_cost", "min_cost", "max_cost", "seeds"])
        for k in range(E):
            col = M[:, k]
            w.writerow([k + 1, repr(float(np.mean(col))), repr(float(np.min(col))),
                        repr(float(np.max(col))), len(curves)])


def cmd_train(cfg, args):
    if args.policy:
        cfg.policy = args.policy
        cfg.policy_dims = {}
    tc = cfg.train_config()
    if args.epochs is not None:
        tc = replace(tc, epochs=args.epochs)
    tc.validate()
    seeds = _seed_list(args.seeds) if args.seeds else [tc.seed if args.seed is None else args.seed]
    root = Path(args.out or cfg.output_dir)
    curves, summaries = [], []
    for seed in seeds:
        out = run_dir(root, tc.policy, seed)
        tcs = replace(tc, seed=seed)

        def progress(epoch, curve, seed=seed):
            if epoch == 1 or epoch % 10 == 0 or epoch == tcs.epochs:
                log.info("%s seed %d epoch %d mean cost %.6g", tcs.policy, seed, epoch,
                         curve.mean[-1])

        res = train(tcs, out_dir=out, progress=progress)
        curves.append(res.curve)
        summaries.append(json.loads((out / "summary.json").read_text()))
    if len(seeds) > 1:
        write_envelope(curves, root / tc.policy / "envelope.csv")
    _emit({"policy": tc.policy, "runs": [str(run_dir(root, tc.policy, s)) for s in seeds],
           "summaries": summaries})
    return 0


# -- eval --------------------------------------------------------------------

def _run_experiment(cfg, run):
    run = Path(run)
    ck = run / "checkpoint.json"
    if not ck.is_file():
        raise FileNotFoundError(f"missing {ck}")
    resolved = run / "config.resolved.toml"
    if resolved.is_file():
        cfg = load_config(resolved)
    data = json.loads(ck.read_text())
    tc = replace(cfg.train_config(), seed=data.get("seed", 0))
    return load_checkpoint(ck, tc)


def cmd_eval(cfg, args):
    exp, flat = _run_experiment(cfg, args.run)
    x0 = None if args.x0 is None else [float(v) for v in args.x0.split(",")]
    if x0 is not None and len(x0) != 4:
        raise UsageError("--x0 needs four comma-separated numbers")
    ev = evaluate(exp, flat, x0=x0, T=args.T)
    out = Path(args.out) if args.out else Path(args.run) / "trajectories" / "eval.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out, ev["rollout"].t, ev["x"], ev["u"], ev["tip"], ev["stage_cost"])
    _emit({"trajectory": str(out), "J_T": ev["J_T"], "obstacle_violations": ev["penetrations"],
           "final_state": ev["x"][-1]})
    return 0


# -- verify ------------------------------------------------------------------

def cmd_verify_les(cfg, args):
    rng = np.random.default_rng(args.seed)
    if args.checkpoint:
        ck = Path(args.checkpoint)
        exp, flat = _run_experiment(cfg, ck.parent if ck.is_file() else ck)
    else:
        exp = Experiment(cfg.train_config(policy="youla", policy_dims=
                                          cfg.policy_dims if cfg.policy == "youla" else {}))
        flat = None
    report = {"policy": exp.policy.kind}
    if not exp.policy.structural:
        report["hurwitz_pass_rate"] = None
        report["note"] = "n/a: no structural stability guarantee for this policy class"
    else:
        report["hurwitz_pass_rate"] = structural_pass_rate(
            exp.policy, exp.plant, draws=args.draws, rng=rng, floor=cfg.verify.floor)
    if flat is not None:
        radius = cfg.verify.decay_radius
        nominal = np.asarray(exp.cfg.eval_x0, dtype=float)
        dirs = [nominal / np.linalg.norm(nominal)]
        for _ in range(args.decay_draws):
            v = rng.normal(size=exp.policy.n)
            dirs.append(v / np.linalg.norm(v))
        fits = [decay_tail_report(exp, flat, radius * d, T=cfg.verify.decay_T, p=cfg.verify.tail_p)
                for d in dirs]
        report["decay_fits"] = [{k: f[k] for k in ("x0", "final_norm", "decay_x", "decay_u")}
                                for f in fits]
        report["tail_checks"] = [f["tail"] for f in fits]
    _emit(report)
    return 0


def cmd_verify_necessity(cfg, args):
    plant = CartPole(cfg.plant)
    A, B = plant.linearize()
    K = lqr(A, B, np.diag(cfg.lqr_Q), np.atleast_2d(cfg.lqr_R)).K
    rng = np.random.default_rng(args.seed)
    controllers = {
        "static_lqr": linear_controller(K),
        "dynamic_linear": linear_controller(K, Ac=[[-2.0, 1.0], [0.0, -3.0]],
                                            Bc=0.1 * np.ones((2, 4)), Cc=[[0.5, -0.5]]),
    }
    x0s = []
    for _ in range(args.draws):
        v = rng.normal(size=4)
        x0s.append(rng.uniform(0, 1) * 0.05 * v / np.linalg.norm(v))
    report = {}
    for name, C in controllers.items():
        tr = necessity_transform(C, plant, K)
        worst = {"max_input_deviation": 0.0, "max_state_deviation": 0.0, "max_xhat_q1_gap": 0.0}
        for x0 in x0s:
            r = equivalence_check(tr, plant, x0, T=args.T, h=cfg.train.h)
            for k in worst:
                worst[k] = max(worst[k], r[k])
        worst["passed"] = worst["max_input_deviation"] <= args.tol
        report[name] = worst
    report["draws"] = args.draws
    report["tolerance"] = args.tol
    _emit(report)
    return 0


# -- compare -----------------------------------------------------------------

def _collect_runs(path):
    """A run dir holds summary.json; a policy dir holds ``seed*`` run dirs."""
    path = Path(path)
    if (path / "summary.json").is_file():
        return [path]
    runs = sorted(p for p in path.glob("seed*") if p.is_dir())
    if not runs:
        raise FileNotFoundError(f"missing {path / 'summary.json'} (and no seed* run dirs)")
    for r in runs:
        for name in ("summary.json", "curve.csv"):
            if not (r / name).is_file():
                raise FileNotFoundError(f"missing {r / name}")
    return runs


def _read_curve(path):
    with open(path, newline="") as fh:
        return [float(row["mean_cost"]) for row in csv.DictReader(fh)]


def cmd_compare(cfg, args):
    rows, curves = [], {}
    for d in args.runs:
        for r in _collect_runs(d):
            if not (r / "curve.csv").is_file():
                raise FileNotFoundError(f"missing {r / 'curve.csv'}")
            s = json.loads((r / "summary.json").read_text())
            h = s.get("hurwitz")
            rows.append({"run": str(r), "policy": s["policy"], "seed": s["seed"],
                         "final_cost": s["final_mean_cost"], "best_cost": s["best_mean_cost"],
                         "hurwitz": "n/a" if h is None else bool(h),
                         "obstacle_violations": s["obstacle_violations"]})
            curves.setdefault(s["policy"], []).append(_read_curve(r / "curve.csv"))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["policy", "epoch", "mean_cost", "min_cost", "max_cost", "seeds"])
            for pol, cs in curves.items():
                E = min(len(c) for c in cs)
                M = np.array([c[:E] for c in cs])
                for k in range(E):
                    w.writerow([pol, k + 1, repr(float(M[:, k].mean())),
                                repr(float(M[:, k].min())), repr(float(M[:, k].max())), len(cs)])
    head = f"{'policy':<14} {'seed':>4} {'final_cost':>12} {'best_cost':>12} {'hurwitz':>8} {'violations':>10}"
    lines = [head] + [f"{r['policy']:<14} {r['seed']:>4} {r['final_cost']:>12.6g} "
                      f"{r['best_cost']:>12.6g} {str(r['hurwitz']).lower():>8} "
                      f"{r['obstacle_violations']:>10}" for r in rows]
    print("\n".join(lines), file=sys.stderr if args.json else sys.stdout)
    if args.json:
        _emit(rows)
    return 0


# -- entry -------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="les-youla", description="LES Youla-residual policies on a cart-pole task")
    p.add_argument("--config", help="experiment TOML file (defaults for every missing key)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", parser_class=_Parser)
    sub.required = True

    sub.add_parser("lqr", help="LQR gain at the upright equilibrium")
    sub.add_parser("config", help="print the fully resolved configuration")

    t = sub.add_parser("train", help="train one policy class")
    t.add_argument("--policy", choices=("youla", "residual_mlp", "pure_mlp",
                                        "residual_lstm", "pure_lstm"))
    t.add_argument("--seed", type=int)
    t.add_argument("--seeds", help="list such as 0-4 or 0,2,3; writes envelope.csv")
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", help="output root (default: config output dir or $RUN_DIR)")

    e = sub.add_parser("eval", help="roll out a trained checkpoint")
    e.add_argument("run")
    e.add_argument("--x0")
    e.add_argument("--T", type=float)
    e.add_argument("--out")

    v = sub.add_parser("verify", help="stability and necessity checks")
    vs = v.add_subparsers(dest="what", parser_class=_Parser)
    vs.required = True
    vl = vs.add_parser("les")
    vl.add_argument("--checkpoint")
    vl.add_argument("--draws", type=int, default=100)
    vl.add_argument("--decay-draws", type=int, default=0)
    vl.add_argument("--seed", type=int, default=0)
    vn = vs.add_parser("necessity")
    vn.add_argument("--draws", type=int, default=20)
    vn.add_argument("--T", type=float, default=5.0)
    vn.add_argument("--tol", type=float, default=1e-8)
    vn.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("compare", help="summarize finished runs")
    c.add_argument("runs", nargs="+")
    c.add_argument("--out", help="merged envelope CSV")
    c.add_argument("--json", action="store_true", help="print rows as JSON (table to stderr)")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.cmd == "lqr":
            return cmd_lqr(cfg, args)
        if args.cmd == "config":
            print(dump_config(cfg), end="")
            return 0
        if args.cmd == "train":
            return cmd_train(cfg, args)
        if args.cmd == "eval":
            return cmd_eval(cfg, args)
        if args.cmd == "verify":
            return (cmd_verify_les if args.what == "les" else cmd_verify_necessity)(cfg, args)
        return cmd_compare(cfg, args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
