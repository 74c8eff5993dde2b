"""Lap-time ingestion, normalization, model fitting and F1 instance construction.

The lap-time model is Gaussian with mean ``beta * exp(-k * alpha) - |gamma| * k``
over lap index ``k`` and a constant standard deviation.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from itertools import combinations
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .core import Feedback, WtbInstance
from .errors import CsvFormatError, FitError, NormalizationError, ParameterError
from .losses import TallyTable

log = logging.getLogger(__name__)

LAP_COLUMNS = ("driver_id", "race_id", "lap_index", "lap_time_sec", "pit_stop")
FIT_COLUMNS = ("driver_id", "race_id", "alpha", "beta", "gamma", "sigma", "terminal_mean", "num_laps")
MIN_PRE_PIT_LAPS = 8
SIGMA_FLOOR = 1e-4
MEAN_SANITY = (-0.5, 1.5)


@dataclass(frozen=True)
class LapRecord:
    driver_id: int
    race_id: int
    lap_index: int
    lap_time_sec: float
    pit_stop: bool


_BOOL = {"0": False, "1": True, "false": False, "true": True}


def parse_lap_csv(source: str | Path | IO[str] | IO[bytes] | bytes) -> list[LapRecord]:
    """Read ``driver_id,race_id,lap_index,lap_time_sec,pit_stop`` rows.

    Raises :class:`CsvFormatError` naming the first bad row and column.
    """
    if isinstance(source, bytes):
        fh: IO[str] = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, (str, Path)):
        fh = io.StringIO(Path(source).read_text(encoding="utf-8"))
    else:
        raw = source.read()
        fh = io.StringIO(raw.decode("utf-8") if isinstance(raw, bytes) else raw)
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        return []
    header = [h.strip() for h in header]
    if tuple(header) != LAP_COLUMNS:
        raise CsvFormatError(0, ",".join(header), f"expected header {','.join(LAP_COLUMNS)}")
    records = []
    for row_no, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(LAP_COLUMNS):
            raise CsvFormatError(row_no, "*", f"expected {len(LAP_COLUMNS)} fields, got {len(row)}")
        vals = [c.strip() for c in row]
        parsed = []
        for col, text in zip(LAP_COLUMNS[:3], vals[:3]):
            try:
                parsed.append(int(text))
            except ValueError:
                raise CsvFormatError(row_no, col, f"not an integer: {text!r}") from None
        if parsed[2] < 1:
            raise CsvFormatError(row_no, "lap_index", "must be >= 1")
        try:
            lap_time = float(vals[3])
        except ValueError:
            raise CsvFormatError(row_no, "lap_time_sec", f"not a number: {vals[3]!r}") from None
        if not (math.isfinite(lap_time) and lap_time > 0):
            raise CsvFormatError(row_no, "lap_time_sec", "must be positive")
        pit = _BOOL.get(vals[4].lower())
        if pit is None:
            raise CsvFormatError(row_no, "pit_stop", f"expected 0/1/true/false, got {vals[4]!r}")
        records.append(LapRecord(parsed[0], parsed[1], parsed[2], lap_time, pit))
    return records


def write_lap_csv(records: Iterable[LapRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LAP_COLUMNS)
        for r in records:
            w.writerow([r.driver_id, r.race_id, r.lap_index, repr(r.lap_time_sec), int(r.pit_stop)])


def normalize_and_filter(records: Sequence[LapRecord], race_id: int,
                         min_laps: int = MIN_PRE_PIT_LAPS) -> dict[int, np.ndarray]:
    """Per-driver normalized lap series for one race, ready for fitting.

    Lap times are min-max scaled over every lap of the race. Each driver keeps
    the run of consecutive laps starting at lap 1 and ending before the first
    pit-stop lap; drivers with fewer than ``min_laps`` such laps are dropped,
    and the rest are cut to the shortest surviving length.
    """
    race = [r for r in records if r.race_id == race_id]
    if not race:
        return {}
    times = np.array([r.lap_time_sec for r in race])
    lo, hi = float(times.min()), float(times.max())
    if hi <= lo:
        raise NormalizationError(f"race {race_id}: all lap times are equal")
    by_driver: dict[int, dict[int, LapRecord]] = defaultdict(dict)
    for r in race:
        by_driver[r.driver_id][r.lap_index] = r
    series: dict[int, list[float]] = {}
    for driver, laps in sorted(by_driver.items()):
        prefix = []
        k = 1
        while k in laps and not laps[k].pit_stop:
            prefix.append((laps[k].lap_time_sec - lo) / (hi - lo))
            k += 1
        if len(prefix) >= min_laps:
            series[driver] = prefix
    if not series:
        return {}
    n = min(len(s) for s in series.values())
    return {d: np.asarray(s[:n]) for d, s in series.items()}


@dataclass(frozen=True)
class LapModelFit:
    alpha: float
    beta: float
    gamma: float
    sigma: float
    terminal_mean: float
    num_laps: int
    ssr: float = float("nan")

    def mean(self, k):
        """Predicted normalized lap time at lap index ``k`` (scalar or array)."""
        return lap_mean(k, self.alpha, self.beta, self.gamma)


def lap_mean(k, alpha: float, beta: float, gamma: float):
    return beta * np.exp(-k * alpha) - abs(gamma) * k


def _residuals(theta: np.ndarray, k: np.ndarray, y: np.ndarray) -> np.ndarray:
    return lap_mean(k, theta[0], theta[1], theta[2]) - y


def _jacobian(theta: np.ndarray, k: np.ndarray, y: np.ndarray, h: float = 1e-6) -> np.ndarray:
    J = np.empty((k.size, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        J[:, j] = (_residuals(theta + e, k, y) - _residuals(theta - e, k, y)) / (2 * h)
    return J


def levenberg_marquardt(theta0: Sequence[float], k: np.ndarray, y: np.ndarray,
                        max_iter: int = 200, rtol: float = 1e-10) -> tuple[np.ndarray, float, bool]:
    """Damped Gauss-Newton on the lap model's squared residuals.

    Returns ``(theta, ssr, converged)``. Convergence means an accepted step
    cut the residual sum by a relative amount below ``rtol`` (or the residual
    vanished) within ``max_iter`` iterations.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _lm(np.asarray(theta0, dtype=float), k, y, max_iter, rtol)


def _lm(theta: np.ndarray, k: np.ndarray, y: np.ndarray, max_iter: int,
        rtol: float) -> tuple[np.ndarray, float, bool]:
    r = _residuals(theta, k, y)
    ssr = float(r @ r)
    lam = 1e-3
    for _ in range(max_iter):
        if ssr < 1e-30:
            return theta, ssr, True
        J = _jacobian(theta, k, y)
        g = J.T @ r
        A = J.T @ J
        accepted = False
        while lam < 1e16:
            D = np.diag(np.maximum(np.diag(A), 1e-12))
            try:
                step = np.linalg.solve(A + lam * D, -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            cand = theta + step
            r_new = _residuals(cand, k, y)
            ssr_new = float(r_new @ r_new)
            if np.isfinite(ssr_new) and ssr_new <= ssr:
                decrease = ssr - ssr_new
                theta, r = cand, r_new
                lam = max(lam / 10, 1e-12)
                accepted = True
                if decrease <= rtol * ssr:
                    return theta, ssr_new, True
                ssr = ssr_new
                break
            lam *= 10
        if not accepted:
            # no descent direction left at any damping: a stationary point
            return theta, ssr, True
    return theta, ssr, False


def _start_grid(k: np.ndarray, y: np.ndarray) -> list[tuple[float, float, float]]:
    half = k.size // 2
    slope = float(np.polyfit(k[half:], y[half:], 1)[0]) if k.size - half >= 2 else 0.0
    ymax = float(y.max())
    return [(a, b, g) for a in (0.1, 0.5, 1.0, 2.0) for b in (ymax, 2 * ymax)
            for g in (0.0, abs(slope))]


def fit_lap_model(series: Sequence[float], min_laps: int = MIN_PRE_PIT_LAPS) -> LapModelFit:
    """Least-squares fit of the lap model to a normalized series indexed from ``k = 1``.

    Runs :func:`levenberg_marquardt` from a small grid of starts and keeps
    the converged start with the lowest residual. ``sigma`` is the sample
    standard deviation of the residuals, floored at ``1e-4``.
    """
    y = np.asarray(series, dtype=float)
    if y.size < min_laps:
        raise ParameterError(f"need at least {min_laps} laps, got {y.size}")
    k = np.arange(1, y.size + 1, dtype=float)
    best = None
    best_any = None
    for start in _start_grid(k, y):
        theta, ssr, ok = levenberg_marquardt(start, k, y)
        if best_any is None or ssr < best_any[1]:
            best_any = (theta, ssr)
        if ok and (best is None or ssr < best[1]):
            best = (theta, ssr)
    if best is None:
        theta, ssr = best_any
        raise FitError("no start converged", best=_make_fit(theta, k, y, ssr))
    return _make_fit(best[0], k, y, best[1])


def _make_fit(theta: np.ndarray, k: np.ndarray, y: np.ndarray, ssr: float) -> LapModelFit:
    alpha, beta, gamma = (float(v) for v in theta)
    resid = lap_mean(k, alpha, beta, gamma) - y
    sigma = max(float(np.std(resid, ddof=1)), SIGMA_FLOOR)
    n = int(k.size)
    return LapModelFit(alpha, beta, gamma, sigma, float(lap_mean(n, alpha, beta, gamma)), n, float(ssr))


def eligible_pairs(fits: dict[int, LapModelFit]) -> list[tuple[int, int]]:
    """Driver pairs whose terminal means each lie within the other's ``sigma**2``.

    The half-width is the variance, exactly as the selection rule states it,
    even though it is not in the units of the mean.
    """
    out = []
    for a, b in combinations(sorted(fits), 2):
        fa, fb = fits[a], fits[b]
        if abs(fa.terminal_mean - fb.terminal_mean) <= fb.sigma**2 and \
                abs(fb.terminal_mean - fa.terminal_mean) <= fa.sigma**2:
            out.append((a, b))
    return out


def make_f1_instance(fit_a: LapModelFit, fit_b: LapModelFit, m: int,
                     require_decreasing: bool = True) -> WtbInstance:
    """Two-driver instance: picking a driver with ``y`` plays in the window samples lap ``y`` of their model.

    Means are clamped to ``[0, 1]``; feedback is Gaussian with the driver's
    ``sigma``, clamped to ``[0, 1]``.
    """
    if m < 1 or m > fit_a.num_laps or m > fit_b.num_laps:
        raise ParameterError(f"m={m} exceeds the fitted lap range")
    counts = np.arange(1, m + 1, dtype=float)
    losses = []
    for fit in (fit_a, fit_b):
        means = np.asarray(fit.mean(counts), dtype=float)
        if require_decreasing and m > 1 and not np.all(np.diff(means) < 0):
            raise ParameterError(f"fitted mean curve is not strictly decreasing: {means.round(4).tolist()}")
        if np.any((means < MEAN_SANITY[0]) | (means > MEAN_SANITY[1])):
            raise ParameterError("fitted means leave the sanity range [-0.5, 1.5]")
        clamped = np.clip(means, 0.0, 1.0)
        if np.any(clamped != means):
            log.info("clamped %d fitted means into [0, 1]", int(np.sum(clamped != means)))
        losses.append(TallyTable(counts, clamped))
    return WtbInstance(2, m, np.ones((2, m)), losses,
                       Feedback("clamped-gaussian", (fit_a.sigma, fit_b.sigma)))


def fit_race(records: Sequence[LapRecord], race_id: int) -> dict[int, LapModelFit]:
    """Fit every eligible driver of a race; drivers whose fit fails are skipped with a warning."""
    fits = {}
    for driver, series in normalize_and_filter(records, race_id).items():
        try:
            fits[driver] = fit_lap_model(series)
        except FitError as exc:
            log.warning("race %s driver %s: %s", race_id, driver, exc)
    return fits


def fit_all(records: Sequence[LapRecord]) -> dict[int, dict[int, LapModelFit]]:
    out = {}
    for race_id in sorted({r.race_id for r in records}):
        try:
            out[race_id] = fit_race(records, race_id)
        except NormalizationError as exc:
            log.warning("%s", exc)
    return out


def write_fits_csv(fits: dict[int, dict[int, LapModelFit]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIT_COLUMNS)
        for race_id, per_driver in sorted(fits.items()):
            for driver, f in sorted(per_driver.items()):
                w.writerow([driver, race_id, repr(f.alpha), repr(f.beta), repr(f.gamma),
                            repr(f.sigma), repr(f.terminal_mean), f.num_laps])


def read_fits_csv(path: str | Path) -> dict[int, dict[int, LapModelFit]]:
    out: dict[int, dict[int, LapModelFit]] = defaultdict(dict)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[int(row["race_id"])][int(row["driver_id"])] = LapModelFit(
                float(row["alpha"]), float(row["beta"]), float(row["gamma"]), float(row["sigma"]),
                float(row["terminal_mean"]), int(row["num_laps"]))
    return dict(out)


def write_pairs_csv(pairs: dict[int, list[tuple[int, int]]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["race_id", "driver_a", "driver_b"])
        for race_id, ps in sorted(pairs.items()):
            for a, b in ps:
                w.writerow([race_id, a, b])


def synthesize_laps(rng: np.random.Generator, num_races: int = 3, num_drivers: int = 12,
                    num_laps: int = 20) -> list[LapRecord]:
    """Synthetic lap records in the ingestion schema.

    Each race draws one lap-model curve; drivers perturb it slightly and add
    their own noise level, in normalized units mapped to roughly 80-100 s.
    Every driver pits once at a random lap between 6 and ``num_laps``.
    """
    records = []
    for race in range(1, num_races + 1):
        base = rng.uniform(80.0, 90.0)
        alpha0, beta0, gamma0 = rng.uniform(0.3, 1.2), rng.uniform(0.4, 0.8), rng.uniform(0.002, 0.01)
        for driver in range(1, num_drivers + 1):
            alpha = alpha0 * rng.uniform(0.85, 1.15)
            beta = beta0 * rng.uniform(0.9, 1.1)
            gamma = gamma0 * rng.uniform(0.8, 1.2)
            sigma = rng.uniform(0.04, 0.08)
            offset = rng.uniform(0.1, 0.105)
            pit_lap = int(rng.integers(6, num_laps + 1))
            for k in range(1, num_laps + 1):
                tau = offset + beta * math.exp(-k * alpha) - gamma * k + sigma * rng.standard_normal()
                secs = base + 10.0 * tau
                if k == pit_lap:
                    secs += 20.0
                records.append(LapRecord(driver, race, k, float(secs), k == pit_lap))
    return records


def instance_from_spec(params: dict, rng: np.random.Generator) -> WtbInstance:
    """Harness entry point for the ``f1`` family.

    With ``laps_csv`` the named (or first eligible) pair of ``race_id`` is
    used; otherwise a synthetic race is drawn from ``rng`` until one yields an
    eligible pair with decreasing mean curves.
    """
    m = params.get("m")
    if "laps_csv" in params:
        records = parse_lap_csv(params["laps_csv"])
        race_id = int(params["race_id"])
        fits = fit_race(records, race_id)
        if "driver_a" in params:
            pair = (int(params["driver_a"]), int(params["driver_b"]))
        else:
            pairs = eligible_pairs(fits)
            if not pairs:
                raise ParameterError(f"race {race_id} has no eligible driver pair")
            pair = pairs[0]
        fa, fb = fits[pair[0]], fits[pair[1]]
        return make_f1_instance(fa, fb, int(m or min(fa.num_laps, fb.num_laps)))
    for _ in range(200):
        records = synthesize_laps(rng, num_races=1, num_drivers=int(params.get("num_drivers", 12)))
        fits = fit_race(records, 1)
        for a, b in eligible_pairs(fits):
            mm = int(m or min(fits[a].num_laps, fits[b].num_laps))
            try:
                return make_f1_instance(fits[a], fits[b], mm)
            except ParameterError:
                continue
    raise ParameterError("could not draw a synthetic race with a usable driver pair")


def fit_to_dict(fit: LapModelFit) -> dict:
    return asdict(fit)
