"""Loss functions mapping a weighted tally value to an expected loss.

Every loss accepts either a Python float or a numpy array of tally values and
returns the matching type, so the same object serves the per-step simulator
and the vectorized oracles.
"""

from __future__ import annotations

import math
from typing import Any, Sequence

import numpy as np

from .errors import ParameterError

TALLY_TOLERANCE = 1e-9


class TallyTable:
    """Finite lookup table ``tally value -> loss``.

    A query matches a key when it lies within ``tol`` of it. Queries that
    match no key raise, since the table is meant to cover every reachable
    tally value.
    """

    kind = "table"

    def __init__(self, keys: Sequence[float], values: Sequence[float],
                 tol: float = TALLY_TOLERANCE) -> None:
        keys_arr = np.asarray(keys, dtype=float)
        vals_arr = np.asarray(values, dtype=float)
        if keys_arr.ndim != 1 or keys_arr.shape != vals_arr.shape or keys_arr.size == 0:
            raise ParameterError("table keys and values must be equal-length, non-empty 1-d sequences")
        order = np.argsort(keys_arr, kind="stable")
        self.keys = keys_arr[order]
        self.values = vals_arr[order]
        if np.any(np.diff(self.keys) <= 2 * tol):
            raise ParameterError("table keys must be separated by more than twice the tolerance")
        self.tol = float(tol)
        self.keys.setflags(write=False)
        self.values.setflags(write=False)

    def _index(self, z: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.keys, z)
        lo = np.clip(idx - 1, 0, self.keys.size - 1)
        hi = np.clip(idx, 0, self.keys.size - 1)
        use_hi = np.abs(self.keys[hi] - z) <= np.abs(self.keys[lo] - z)
        best = np.where(use_hi, hi, lo)
        miss = np.abs(self.keys[best] - z) > self.tol
        if np.any(miss):
            bad = np.asarray(z)[miss].ravel()[0]
            raise ParameterError(f"tally value {bad!r} has no entry in the loss table")
        return best

    def __call__(self, z):
        if isinstance(z, np.ndarray):
            return self.values[self._index(z)]
        return float(self.values[self._index(np.asarray([float(z)]))[0]])

    def to_dict(self) -> dict[str, Any]:
        return {"loss_table": [[float(k), float(v)] for k, v in zip(self.keys, self.values)],
                "tolerance": self.tol}

    def __repr__(self) -> str:
        return f"TallyTable(n={self.keys.size})"


class AffineLoss:
    """``intercept + slope * z`` plus additive offsets at isolated tally points.

    ``adjustments`` is a sequence of ``(z0, delta)`` pairs; ``delta`` is added
    whenever the tally lies within ``tol`` of ``z0``. This covers every
    synthetic family, where the loss is linear in the tally except at one or
    two distinguished contexts.
    """

    kind = "affine"

    def __init__(self, intercept: float, slope: float = 0.0,
                 adjustments: Sequence[tuple[float, float]] = (),
                 tol: float = TALLY_TOLERANCE) -> None:
        self.intercept = float(intercept)
        self.slope = float(slope)
        self.adjustments = tuple((float(a), float(b)) for a, b in adjustments)
        self.tol = float(tol)

    def __call__(self, z):
        if isinstance(z, np.ndarray):
            out = self.intercept + self.slope * z
            for z0, delta in self.adjustments:
                out = out + np.where(np.abs(z - z0) <= self.tol, delta, 0.0)
            return out
        z = float(z)
        out = self.intercept + self.slope * z
        for z0, delta in self.adjustments:
            if abs(z - z0) <= self.tol:
                out += delta
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"loss_rule": {"kind": "affine", "intercept": self.intercept, "slope": self.slope,
                              "adjustments": [list(a) for a in self.adjustments],
                              "tolerance": self.tol}}

    def __repr__(self) -> str:
        return f"AffineLoss({self.intercept}, {self.slope}, {self.adjustments})"


class DyadicMatchLoss:
    """Loss ``hit`` when the tally equals ``target / 2**m`` exactly, else ``miss``.

    Tallies built from weights ``2**-i`` are exact binary fractions, so the
    comparison is done on the integer numerator ``z * 2**m``.
    """

    kind = "dyadic-match"

    def __init__(self, m: int, target: int, hit: float = 0.0, miss: float = 1.0) -> None:
        if m < 1 or m > 52:
            raise ParameterError("dyadic tallies need 1 <= m <= 52 to stay exact in float64")
        self.m = int(m)
        self.target = int(target)
        self.hit = float(hit)
        self.miss = float(miss)
        self._scale = float(2 ** self.m)

    def numerator(self, z):
        if isinstance(z, np.ndarray):
            return np.rint(z * self._scale).astype(np.int64)
        return int(round(float(z) * self._scale))

    def __call__(self, z):
        num = self.numerator(z)
        if isinstance(num, np.ndarray):
            return np.where(num == self.target, self.hit, self.miss)
        return self.hit if num == self.target else self.miss

    def to_dict(self) -> dict[str, Any]:
        return {"loss_rule": {"kind": "dyadic-match", "m": self.m, "target": self.target,
                              "hit": self.hit, "miss": self.miss}}

    def __repr__(self) -> str:
        return f"DyadicMatchLoss(m={self.m}, target={self.target})"


def loss_from_dict(d: dict[str, Any]):
    """Inverse of the ``to_dict`` methods above."""
    if "loss_table" in d:
        pairs = d["loss_table"]
        return TallyTable([p[0] for p in pairs], [p[1] for p in pairs],
                          tol=d.get("tolerance", TALLY_TOLERANCE))
    if "loss_rule" in d:
        rule = d["loss_rule"]
        kind = rule.get("kind")
        if kind == "affine":
            return AffineLoss(rule["intercept"], rule.get("slope", 0.0),
                              [tuple(a) for a in rule.get("adjustments", [])],
                              tol=rule.get("tolerance", TALLY_TOLERANCE))
        if kind == "dyadic-match":
            return DyadicMatchLoss(rule["m"], rule["target"], rule.get("hit", 0.0),
                                   rule.get("miss", 1.0))
        raise ParameterError(f"unknown loss rule kind {kind!r}")
    raise ParameterError("loss entry needs a 'loss_table' or 'loss_rule' field")


def is_unit_interval(v: float) -> bool:
    return math.isfinite(v) and 0.0 <= v <= 1.0
