"""Command line driver: ``aesindyc train | eval | extract``.

Exit codes: 0 ok, 2 configuration error, 3 numeric divergence, 4 I/O error.
The default output root is taken from ``AESINDYC_OUT`` (falls back to ``runs``).
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, analysis, ppo
from . import surrogate as sur
from .burgers_env import BurgersEnv
from .config import RunConfig, dump_config, load_config, parse_config
from .dyna import optimize_policy
from .errors import CheckpointError, ConfigError, NumericError
from .evaluation import SCENARIOS, evaluate_policy

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "AESINDYC_OUT"
METRIC_COLUMNS = (
    "epoch",
    "fom_interactions",
    "eval_reward_mean",
    "eval_reward_std",
    "extrap_reward_mean",
    "extrap_reward_std",
    "surr_train_loss",
    "surr_val_loss",
)
RESOLVED_NAME = "config.resolved.ini"


def _out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _num(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_metrics(path, records) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for rec in records:
            w.writerow([_num(getattr(rec, c)) for c in METRIC_COLUMNS])


def read_metrics(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(config_path, seed: int | None = None, out=None, quiet: bool = False) -> Path:
    rc = load_config(config_path) if config_path else RunConfig()
    if seed is not None:
        rc.seed = seed
    out = Path(out) if out else _out_root() / f"{Path(config_path).stem if config_path else 'default'}-seed{rc.seed}"
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_NAME).write_text(f"# aesindyc {__version__}\n" + dump_config(rc))

    env = BurgersEnv(rc.env)
    drl = dict(rc.drl)
    hidden, log_std_init = drl.pop("hidden"), drl.pop("log_std_init")
    policy = ppo.init_policy(
        env.obs_dim, env.act_dim, hidden=hidden, seed=np.random.default_rng([rc.seed, 1]),
        log_std_init=log_std_init, **drl,
    )
    dyna = rc.dyna
    if rc.mode == "baseline" and dyna.k_dyn != 1:
        dyna = replace(dyna, k_dyn=1)

    warnings = []

    def log(msg):
        if "WARNING" in msg:
            warnings.append(msg)
        if not quiet:
            print(msg, flush=True)

    result = optimize_policy(env, dyna, policy=policy, seed=rc.seed, out_dir=out, log=log)
    write_metrics(out / "metrics.csv", result.records)
    ppo.save_policy(result.policy, out / "policy.json")
    if result.surrogate is not None:
        sur.save(result.surrogate, out / "surrogate.json", {"config": RESOLVED_NAME})
    (out / "warnings.txt").write_text("".join(w + "\n" for w in warnings))
    if not quiet:
        print(f"run written to {out} (FOM interactions: {result.ledger.count})")
    return out


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _resolve_file(checkpoint, name: str) -> Path:
    p = Path(checkpoint)
    if p.is_dir():
        p = p / name
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    return p


def _find_config(start: Path) -> RunConfig:
    for d in [start.parent, *start.parents]:
        cand = d / RESOLVED_NAME
        if cand.exists():
            return parse_config(cand.read_text(), str(cand))
    return RunConfig()


def cmd_eval(checkpoint, scenario: str = "uniform", n_seeds: int = 5, horizon=None, out=None, config_path=None):
    """Evaluate a policy checkpoint on fixed seeds ``0 .. n_seeds-1``; returns the summary dict."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if n_seeds < 1:
        raise ConfigError("need at least one evaluation seed")
    path = _resolve_file(checkpoint, "policy.json")
    policy = ppo.load_policy(path)
    rc = load_config(config_path) if config_path else _find_config(path)
    res = evaluate_policy(
        lambda o: ppo.policy_mean(policy, o), rc.env, range(n_seeds), scenario, horizon_s=horizon, record=True
    )
    out = Path(out) if out else path.parent / f"eval_{scenario}"
    out.mkdir(parents=True, exist_ok=True)
    with (out / "rewards.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed", "window", "reward"))
        for s, r in zip(res.seeds, res.eval_rewards):
            w.writerow((s, "eval", repr(float(r))))
        for s, r in zip(res.seeds, res.extrap_rewards):
            w.writerow((s, "extrap", repr(float(r))))
    with (out / "controls.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("time", "seed") + tuple(f"u{j + 1}" for j in range(rc.env.Nu)))
        for k, t in enumerate(res.times):
            for i, s in enumerate(res.seeds):
                w.writerow((repr(float(t)), s) + tuple(repr(float(v)) for v in res.controls[k, i]))
    summary = res.summary()
    lines = [
        f"scenario {scenario}, seeds {len(res.seeds)}",
        f"evaluation window:    {summary['eval_reward_mean']:.4f} ± {summary['eval_reward_std']:.4f}",
        f"extrapolation window: {summary['extrap_reward_mean']:.4f} ± {summary['extrap_reward_std']:.4f}",
    ]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return summary


# ---------------------------------------------------------------------------
# extract
# ---------------------------------------------------------------------------


def cmd_extract(checkpoint, threshold: float = analysis.DEFAULT_THRESHOLD, out=None):
    path = _resolve_file(checkpoint, "surrogate.json")
    p = sur.load(path)
    eqs = analysis.extract_equations(p, threshold)
    out = Path(out) if out else path.parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "equations.txt").write_text("\n".join(eqs) + "\n")
    analysis.xi_export(p, out / "xi.csv")
    print("\n".join(eqs))
    print(f"{analysis.count_active_terms(p, threshold)} active terms above {threshold}")
    return out


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aesindyc", description="Dyna-style PPO with an AE+SINDy-C surrogate.")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="baseline or Dyna training run")
    t.add_argument("--config", help="INI configuration file")
    t.add_argument("--seed", type=int, help="overrides [run] seed")
    t.add_argument("--out", help=f"run directory (default: ${OUT_ENV}/<config>-seed<seed>)")
    t.add_argument("--quiet", action="store_true")

    e = sub.add_parser("eval", help="evaluate a policy checkpoint")
    e.add_argument("--checkpoint", required=True, help="policy.json or a directory holding it")
    e.add_argument("--scenario", choices=SCENARIOS, default="uniform")
    e.add_argument("--seeds", type=int, default=5, help="number of fixed seeds (0..n-1)")
    e.add_argument("--horizon", type=float, help="total simulated seconds")
    e.add_argument("--config", help="environment config (default: the run's resolved config)")
    e.add_argument("--out")

    x = sub.add_parser("extract", help="thresholded latent equations and Xi matrix")
    x.add_argument("--checkpoint", required=True, help="surrogate.json or a directory holding it")
    x.add_argument("--threshold", type=float, default=analysis.DEFAULT_THRESHOLD)
    x.add_argument("--out")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            cmd_train(args.config, args.seed, args.out, args.quiet)
        elif args.command == "eval":
            cmd_eval(args.checkpoint, args.scenario, args.seeds, args.horizon, args.out, args.config)
        else:
            cmd_extract(args.checkpoint, args.threshold, args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:  # includes CheckpointError
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
