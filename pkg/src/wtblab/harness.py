"""Seeded algorithm x instance grids, regret curves and CSV output."""

from __future__ import annotations

import csv
import json
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .algorithms import ALGORITHMS, run_algorithm, run_se
from .core import Environment, WtbInstance
from .errors import CapacityError, ConfigError, ParameterError
from .instances import InstanceSpec, build_instance, make_adaptivity_pair
from .oracle import DP_BUDGET, RunTrace, optimal_value_dp

log = logging.getLogger(__name__)

REGRET_MODES = ("exact-cpr", "excess-vs-reference")


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    params: dict[str, Any] = field(default_factory=dict)
    id: str = ""

    @property
    def label(self) -> str:
        return self.id or self.name


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``checkpoint_stride`` defaults to ``T // 200``. ``master_seed`` together
    with each entry of ``seeds`` fixes every random draw.
    """

    instance: InstanceSpec
    algorithms: tuple[AlgorithmSpec, ...]
    horizon: int
    seeds: tuple[int, ...]
    output_dir: str = "results"
    regret_mode: str = "exact-cpr"
    reference_algorithm: str = "se"
    checkpoint_stride: int | None = None
    master_seed: int = 0
    workers: int = 1
    dp_budget: int = DP_BUDGET
    write_traces: bool = True

    @property
    def stride(self) -> int:
        return self.checkpoint_stride or max(1, self.horizon // 200)

    def validate(self) -> None:
        if self.horizon < 1:
            raise ConfigError("horizon must be positive")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        labels = [a.label for a in self.algorithms]
        if len(set(labels)) != len(labels):
            raise ConfigError("algorithm ids must be distinct")
        for a in self.algorithms:
            if a.name not in ALGORITHMS and not a.name.startswith("always-"):
                raise ConfigError(f"unknown algorithm {a.name!r}")
        if self.regret_mode not in REGRET_MODES:
            raise ConfigError(f"regret_mode must be one of {REGRET_MODES}")
        if self.regret_mode == "excess-vs-reference" and self.reference_algorithm not in labels:
            raise ConfigError("reference_algorithm must be one of the configured algorithms")
        if self.checkpoint_stride is not None and self.checkpoint_stride < 1:
            raise ConfigError("checkpoint_stride must be positive")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        try:
            algs = []
            for a in d["algorithms"]:
                if isinstance(a, str):
                    algs.append(AlgorithmSpec(a))
                else:
                    algs.append(AlgorithmSpec(a["name"], dict(a.get("params", {})), a.get("id", "")))
            cfg = cls(
                instance=InstanceSpec.from_dict(d["instance"]),
                algorithms=tuple(algs),
                horizon=int(d["horizon"]),
                seeds=tuple(int(s) for s in d["seeds"]),
                output_dir=str(d.get("output_dir", "results")),
                regret_mode=d.get("regret_mode", "exact-cpr"),
                reference_algorithm=d.get("reference_algorithm", "se"),
                checkpoint_stride=d.get("checkpoint_stride"),
                master_seed=int(d.get("master_seed", 0)),
                workers=int(d.get("workers", 1)),
                dp_budget=int(d.get("dp_budget", DP_BUDGET)),
                write_traces=bool(d.get("write_traces", True)),
            )
        except KeyError as exc:
            raise ConfigError(f"config misses field {exc.args[0]!r}") from None
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)


@dataclass
class AggregateCurve:
    timesteps: np.ndarray
    mean: np.ndarray
    std_error: np.ndarray
    algorithm_id: str
    num_seeds: int

    def to_csv(self, path: str | Path, x_name: str = "t") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([x_name, "mean", "std_error"])
            for t, mu, se in zip(self.timesteps.tolist(), self.mean.tolist(), self.std_error.tolist()):
                w.writerow([t, repr(mu), repr(se)])

    @property
    def terminal(self) -> tuple[float, float]:
        return float(self.mean[-1]), float(self.std_error[-1])


def aggregate(curves: np.ndarray, timesteps: np.ndarray, algorithm_id: str) -> AggregateCurve:
    """Mean and standard error (sample std over sqrt(n)) across the rows of ``curves``."""
    curves = np.atleast_2d(curves)
    n = curves.shape[0]
    mean = curves.mean(axis=0)
    se = curves.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return AggregateCurve(np.asarray(timesteps), mean, se, algorithm_id, n)


def checkpoints(T: int, stride: int) -> np.ndarray:
    pts = list(range(stride, T + 1, stride))
    if not pts or pts[-1] != T:
        pts.append(T)
    return np.asarray(pts, dtype=np.int64)


def _tag(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def run_rngs(master_seed: int, label: str, seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Feedback and algorithm generators for one run; independent of the other algorithms."""
    env_ss, alg_ss = np.random.SeedSequence([master_seed, _tag(label), seed]).spawn(2)
    return np.random.default_rng(env_ss), np.random.default_rng(alg_ss)


def instance_rng(master_seed: int, seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, _tag("instance"), seed]))


def instance_for_seed(cfg: ExperimentConfig, seed: int) -> WtbInstance:
    """Randomized families are redrawn for every seed; fixed ones ignore it."""
    if cfg.instance.randomized:
        return build_instance(cfg.instance, instance_rng(cfg.master_seed, seed))
    return build_instance(cfg.instance)


def _run_one(cfg: ExperimentConfig, alg: AlgorithmSpec, seed: int) -> RunTrace:
    inst = instance_for_seed(cfg, seed)
    env_rng, alg_rng = run_rngs(cfg.master_seed, alg.label, seed)
    trace = run_algorithm(alg.name, inst, cfg.horizon, alg.params, env_rng, alg_rng, seed)
    trace.algorithm_id = alg.label
    return trace


def _check_budget(cfg: ExperimentConfig, inst: WtbInstance) -> None:
    cells = inst.num_actions**inst.memory_capacity * cfg.horizon
    if cells > cfg.dp_budget:
        raise CapacityError(
            f"exact CPR needs K^m*T = {cells} DP transitions, above the budget {cfg.dp_budget}; "
            "set \"regret_mode\": \"excess-vs-reference\" (or shrink T) to run this experiment")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    curves: dict[str, AggregateCurve]
    terminal: dict[str, np.ndarray]
    traces: dict[tuple[str, int], RunTrace]
    optimum: dict[int, np.ndarray] = field(default_factory=dict)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run every (algorithm, seed) pair, then reduce to per-algorithm regret curves.

    Writes ``traces/<alg>_seed<seed>.csv``, ``aggregate_<alg>.csv``,
    ``summary.csv`` and, in exact mode, ``oracle/seed<seed>.csv`` under
    ``cfg.output_dir``.
    """
    cfg.validate()
    jobs = [(alg, seed) for alg in cfg.algorithms for seed in cfg.seeds]
    if cfg.regret_mode == "exact-cpr":
        _check_budget(cfg, instance_for_seed(cfg, cfg.seeds[0]))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_run_one, cfg, alg, seed) for alg, seed in jobs]
            results = [f.result() for f in futures]
    else:
        results = [_run_one(cfg, alg, seed) for alg, seed in jobs]
    traces = {(alg.label, seed): tr for (alg, seed), tr in zip(jobs, results)}
    for tr in results:
        if tr.T != cfg.horizon:
            raise RuntimeError(f"{tr.algorithm_id} emitted {tr.T} steps instead of {cfg.horizon}")

    pts = checkpoints(cfg.horizon, cfg.stride)
    optimum: dict[int, np.ndarray] = {}
    if cfg.regret_mode == "exact-cpr":
        shared = None
        for seed in cfg.seeds:
            if shared is not None and not cfg.instance.randomized:
                optimum[seed] = shared
                continue
            inst = instance_for_seed(cfg, seed)
            _check_budget(cfg, inst)
            pv = optimal_value_dp(inst, cfg.horizon, budget=cfg.dp_budget, with_sequence=False)
            optimum[seed] = shared = pv.prefix_values

    curves: dict[str, AggregateCurve] = {}
    terminal: dict[str, np.ndarray] = {}
    for alg in cfg.algorithms:
        rows = []
        for seed in cfg.seeds:
            cum = traces[(alg.label, seed)].cumulative_expected()
            if cfg.regret_mode == "exact-cpr":
                base = optimum[seed]
            else:
                base = traces[(cfg.reference_algorithm, seed)].cumulative_expected()
            rows.append((cum - base)[pts - 1])
        mat = np.vstack(rows)
        curves[alg.label] = aggregate(mat, pts, alg.label)
        terminal[alg.label] = mat[:, -1]

    result = ExperimentResult(cfg, curves, terminal, traces, optimum)
    if write:
        write_outputs(result)
    return result


def write_outputs(result: ExperimentResult) -> Path:
    cfg = result.config
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.write_traces:
        (out / "traces").mkdir(exist_ok=True)
        for (label, seed), tr in sorted(result.traces.items()):
            tr.to_csv(out / "traces" / f"{label}_seed{seed}.csv")
    for label, curve in result.curves.items():
        curve.to_csv(out / f"aggregate_{label}.csv")
    if result.optimum:
        (out / "oracle").mkdir(exist_ok=True)
        pts = checkpoints(cfg.horizon, cfg.stride)
        for seed, prefix in sorted(result.optimum.items()):
            with open(out / "oracle" / f"seed{seed}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t", "optimal_value"])
                for t in pts.tolist():
                    w.writerow([t, repr(float(prefix[t - 1]))])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "regret_mode", "num_seeds", "terminal_mean", "terminal_std_error"])
        for label, curve in result.curves.items():
            mu, se = curve.terminal
            w.writerow([label, cfg.regret_mode, curve.num_seeds, repr(mu), repr(se)])
    return out


def m_scaling_sweep(base: ExperimentConfig, M_values: Sequence[int],
                    write: bool = True) -> AggregateCurve:
    """Terminal CPR of successive elimination for each input bound ``M``.

    The instance, horizon and seeds of ``base`` are held fixed. The returned
    curve is indexed by ``M`` instead of time.
    """
    if not M_values:
        raise ConfigError("M_values must be non-empty")
    m = instance_for_seed(base, base.seeds[0]).memory_capacity
    bad = [M for M in M_values if M < m]
    if bad:
        raise ConfigError(f"M values {bad} are below the memory capacity m={m}")
    se_params = next((dict(a.params) for a in base.algorithms if a.name == "se"), {})
    means, ses = [], []
    n = 0
    for M in M_values:
        sub = replace(base, algorithms=(AlgorithmSpec("se", {**se_params, "M": int(M)}),),
                      regret_mode="exact-cpr", output_dir=str(Path(base.output_dir) / f"M{M}"),
                      write_traces=False)
        res = run_experiment(sub, write=write)
        mu, se = res.curves["se"].terminal
        means.append(mu)
        ses.append(se)
        n = res.curves["se"].num_seeds
    curve = AggregateCurve(np.asarray(M_values, dtype=np.int64), np.asarray(means),
                           np.asarray(ses), "se", n)
    if write:
        Path(base.output_dir).mkdir(parents=True, exist_ok=True)
        curve.to_csv(Path(base.output_dir) / "sweep_m.csv", x_name="M")
    return curve


def longest_run(actions: np.ndarray, x: int) -> int:
    best = cur = 0
    for a in actions.tolist():
        cur = cur + 1 if a == x else 0
        best = max(best, cur)
    return best


@dataclass
class AdaptivityRow:
    algorithm: str
    run_on_a: bool
    run_on_b: bool
    identical_observations: bool
    loss_a: float
    loss_b: float

    @property
    def consistent(self) -> bool:
        """Whenever action 1 never fills its window on the first instance, both runs must match."""
        return self.run_on_a or self.identical_observations


def adaptivity_demo(M: int, K: int, T: int, algorithms: Sequence[str] | None = None,
                    seed: int = 0, master_seed: int = 0, delta: float = 0.1) -> list[AdaptivityRow]:
    """Run each algorithm on both adaptivity instances with identical generators."""
    if T <= 4 * M:
        raise ParameterError("the adaptivity demo needs T > 4M")
    tb_a, tb_b = make_adaptivity_pair(M, K)
    names = list(algorithms) if algorithms is not None else list(ALGORITHMS) + ["always-0", "always-1"]
    rows = []
    for name in names:
        traces = []
        for inst in (tb_a, tb_b):
            env_rng, alg_rng = run_rngs(master_seed, name, seed)
            traces.append(run_algorithm(name, inst, T, {"M": M, "delta": delta},
                                        env_rng, alg_rng, seed))
        ta, tb = traces
        rows.append(AdaptivityRow(
            name,
            longest_run(ta.actions, 1) >= M,
            longest_run(tb.actions, 1) >= M,
            bool(np.array_equal(ta.observed_losses, tb.observed_losses)),
            float(ta.expected_losses.sum()),
            float(tb.expected_losses.sum()),
        ))
    return rows


def write_adaptivity_csv(rows: Sequence[AdaptivityRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "x2_run_on_A", "x2_run_on_B", "identical_observations",
                    "loss_A", "loss_B", "consistent"])
        for r in rows:
            w.writerow([r.algorithm, int(r.run_on_a), int(r.run_on_b), int(r.identical_observations),
                        repr(r.loss_a), repr(r.loss_b), int(r.consistent)])
