"""Command line interface: ``wtblab <command> ...``.

Exit codes: 0 on success, 2 for config or parameter errors, 3 when an exact
computation exceeds its budget.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import WtbInstance, eventual_loss, minimal_reo_alpha
from .errors import CapacityError, ConfigError, WtbError
from .f1fit import eligible_pairs, fit_all, parse_lap_csv, synthesize_laps, write_fits_csv, \
    write_lap_csv, write_pairs_csv
from .harness import ExperimentConfig, adaptivity_demo, m_scaling_sweep, run_experiment, \
    write_adaptivity_csv
from .instances import InstanceSpec, build_instance
from .oracle import optimal_value_dp

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3

DEFAULT_M_GRID_FACTORS = (1, 2, 4, 8)


def _load_instance(path: str) -> WtbInstance:
    """Accept either a serialized instance or an ``InstanceSpec`` (has a ``family`` key)."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read instance {path}: {exc}") from None
    if "family" in data:
        return build_instance(InstanceSpec.from_dict(data))
    return WtbInstance.from_dict(data)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    if args.output_dir:
        cfg = _with_output(cfg, args.output_dir)
    res = run_experiment(cfg)
    for label, curve in res.curves.items():
        mu, se = curve.terminal
        print(f"{label}\t{mu:.4f} +- {se:.4f}")
    print(f"wrote {cfg.output_dir}")
    return EXIT_OK


def cmd_sweep_m(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    if args.output_dir:
        cfg = _with_output(cfg, args.output_dir)
    if args.M:
        grid = args.M
    else:
        m = build_instance(cfg.instance).memory_capacity
        grid = [m * f for f in DEFAULT_M_GRID_FACTORS]
    curve = m_scaling_sweep(cfg, grid)
    for M, mu, se in zip(curve.timesteps.tolist(), curve.mean.tolist(), curve.std_error.tolist()):
        print(f"M={M}\t{mu:.4f} +- {se:.4f}")
    return EXIT_OK


def cmd_adaptivity(args: argparse.Namespace) -> int:
    rows = adaptivity_demo(args.M, args.K, args.T, seed=args.seed)
    print("algorithm\tx2_run_A\tx2_run_B\tsame_obs\tloss_A\tloss_B")
    for r in rows:
        print(f"{r.algorithm}\t{int(r.run_on_a)}\t{int(r.run_on_b)}\t{int(r.identical_observations)}"
              f"\t{r.loss_a:.2f}\t{r.loss_b:.2f}")
    if args.output:
        write_adaptivity_csv(rows, args.output)
    return EXIT_OK if all(r.consistent for r in rows) else 1


def cmd_fit_f1(args: argparse.Namespace) -> int:
    records = parse_lap_csv(args.laps)
    fits = fit_all(records)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_fits_csv(fits, out / "fits.csv")
    pairs = {race: eligible_pairs(f) for race, f in fits.items()}
    write_pairs_csv(pairs, out / "pairs.csv")
    n_fits = sum(len(f) for f in fits.values())
    n_pairs = sum(len(p) for p in pairs.values())
    print(f"{n_fits} fits, {n_pairs} eligible pairs -> {out}")
    return EXIT_OK


def cmd_check_reo(args: argparse.Namespace) -> int:
    inst = _load_instance(args.instance)
    x_star, alpha = minimal_reo_alpha(inst)
    print(json.dumps({"x_star": x_star, "alpha": alpha,
                      "eventual_losses": [eventual_loss(inst, x) for x in range(inst.K)]}))
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    inst = _load_instance(args.instance)
    pv = optimal_value_dp(inst, args.T, with_sequence=args.sequence)
    out = {"T": args.T, "value": pv.value}
    if args.sequence and pv.optimal_sequence is not None:
        out["optimal_sequence"] = list(pv.optimal_sequence)
    print(json.dumps(out))
    return EXIT_OK


def cmd_make_instance(args: argparse.Namespace) -> int:
    params = json.loads(args.params) if args.params else {}
    spec = InstanceSpec.from_dict({"family": args.family, "parameters": params, "seed": args.seed})
    inst = build_instance(spec)
    if args.output:
        inst.to_json(args.output)
    else:
        print(json.dumps(inst.to_dict()))
    return EXIT_OK


def cmd_synth_laps(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    records = synthesize_laps(rng, args.races, args.drivers, args.laps)
    write_lap_csv(records, args.output)
    print(f"{len(records)} laps -> {args.output}")
    return EXIT_OK


def _with_output(cfg: ExperimentConfig, out: str) -> ExperimentConfig:
    return replace(cfg, output_dir=out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wtblab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="run an experiment config")
    s.add_argument("config")
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep-m", help="terminal CPR of SE over a grid of M")
    s.add_argument("config")
    s.add_argument("--M", type=int, nargs="+", help="grid (default m, 2m, 4m, 8m)")
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_sweep_m)

    s = sub.add_parser("adaptivity", help="paired runs on the two adaptivity instances")
    s.add_argument("--M", type=int, required=True)
    s.add_argument("--K", type=int, required=True)
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output")
    s.set_defaults(func=cmd_adaptivity)

    s = sub.add_parser("fit-f1", help="fit lap models and list eligible pairs")
    s.add_argument("laps")
    s.add_argument("--output-dir", default=".")
    s.set_defaults(func=cmd_fit_f1)

    s = sub.add_parser("check-reo", help="minimal REO slack of an instance")
    s.add_argument("instance")
    s.set_defaults(func=cmd_check_reo)

    s = sub.add_parser("oracle", help="exact optimal cumulative loss")
    s.add_argument("instance")
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--sequence", action="store_true", help="also print an optimal sequence")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("make-instance", help="materialize a family as instance JSON")
    s.add_argument("family")
    s.add_argument("--params", help="JSON object of family parameters")
    s.add_argument("--seed", type=int)
    s.add_argument("--output")
    s.set_defaults(func=cmd_make_instance)

    s = sub.add_parser("synth-laps", help="write a synthetic lap CSV")
    s.add_argument("output")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--races", type=int, default=3)
    s.add_argument("--drivers", type=int, default=12)
    s.add_argument("--laps", type=int, default=20)
    s.set_defaults(func=cmd_synth_laps)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (ValueError, WtbError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
