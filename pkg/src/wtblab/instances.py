"""Constructors for every problem family used in the experiments and lower bounds."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .core import Feedback, WtbInstance, tally_value
from .errors import ParameterError
from .losses import AffineLoss, DyadicMatchLoss, TallyTable

FAMILIES = ("synthetic-unweighted", "synthetic-weighted", "synthetic-alpha", "darts",
            "prop1", "adaptivity-pair", "f1")


def _feedback(kind: str) -> Feedback:
    if kind not in ("bernoulli", "deterministic"):
        raise ParameterError("synthetic families support bernoulli or deterministic feedback")
    return Feedback(kind)


def _permuted(instance: WtbInstance, permute_seed: int | None) -> WtbInstance:
    if permute_seed is None:
        return instance
    perm = np.random.default_rng(permute_seed).permutation(instance.num_actions)
    return WtbInstance(instance.num_actions, instance.memory_capacity,
                       instance.weights[perm], [instance.losses[i] for i in perm],
                       instance.feedback, instance.horizon_hint,
                       None if instance.labels is None else [instance.labels[i] for i in perm])


def make_synthetic_unweighted(K: int, m: int, feedback: str = "bernoulli",
                              permute_seed: int | None = None) -> WtbInstance:
    """Every loss is 0.5 except action 0 after ``m`` straight plays, which costs 0.35."""
    if K < 2 or m < 1:
        raise ParameterError("synthetic-unweighted needs K >= 2 and m >= 1")
    losses = [AffineLoss(0.5, 0.0, [(float(m), -0.15)])] + [AffineLoss(0.5) for _ in range(K - 1)]
    inst = WtbInstance(K, m, np.ones((K, m)), losses, _feedback(feedback))
    return _permuted(inst, permute_seed)


def decaying_weights(m: int) -> np.ndarray:
    """``v_i = 2^-i`` rescaled so that the weights sum to 1/2."""
    v = 0.5 ** np.arange(1, m + 1)
    return v / (2 * v.sum())


def make_synthetic_weighted(K: int, m: int, feedback: str = "bernoulli",
                            permute_seed: int | None = None) -> WtbInstance:
    """``h(z) = 1 - z`` with weights ``v / (2|v|_1)``; action 0's full window gets a further -0.15."""
    if K < 2 or m < 2:
        raise ParameterError("synthetic-weighted needs K >= 2 and m >= 2")
    w = decaying_weights(m)
    full = tally_value(w, [1] * m)
    losses = [AffineLoss(1.0, -1.0, [(full, -0.15)])] + [AffineLoss(1.0, -1.0) for _ in range(K - 1)]
    inst = WtbInstance(K, m, np.tile(w, (K, 1)), losses, _feedback(feedback))
    return _permuted(inst, permute_seed)


def make_synthetic_alpha(K: int, m: int, feedback: str = "bernoulli",
                         permute_seed: int | None = None) -> WtbInstance:
    """Unweighted instance whose REO only holds with a positive slack.

    Weights are ``1 / (4m)`` and ``h(z) = 1 - z``, except: action 0 with a full
    window subtracts 0.15, and action 1 played once in the window subtracts
    ``(m - 1) / (2m) + 0.2``.
    """
    if K < 3 or m < 2:
        raise ParameterError("synthetic-alpha needs K >= 3 and m >= 2")
    w = np.full(m, 1.0 / (4 * m))
    full = tally_value(w, [1] * m)
    single = tally_value(w, [1] + [0] * (m - 1))
    losses = [AffineLoss(1.0, -1.0, [(full, -0.15)]),
              AffineLoss(1.0, -1.0, [(single, -((m - 1) / (2 * m) + 0.2))])]
    losses += [AffineLoss(1.0, -1.0) for _ in range(K - 2)]
    inst = WtbInstance(K, m, np.tile(w, (K, 1)), losses, _feedback(feedback))
    return _permuted(inst, permute_seed)


def synthetic_alpha_closed_form(m: int) -> float:
    """Slack obtained by working the construction above through by hand.

    ``0.6 - (1 - 1/(4m) - (m-1)/(2m) - 0.2) = -0.2 + (2m - 1)/(4m)``.
    """
    return max(0.0, -0.2 + (2 * m - 1) / (4 * m))


def make_darts(K: int, rng: np.random.Generator, feedback: str = "bernoulli") -> WtbInstance:
    """Darts tournament with ``m = 2``: first toss ~ U[0.68, 0.72], warmed-up toss ~ U[0.58, 0.62].

    Weights are all ones, so the tally is the raw count of tosses in the window.
    """
    if K < 2:
        raise ParameterError("darts needs K >= 2")
    first = rng.uniform(0.68, 0.72, size=K)
    calibrated = rng.uniform(0.58, 0.62, size=K)
    losses = [TallyTable([1.0, 2.0], [first[x], calibrated[x]]) for x in range(K)]
    return WtbInstance(K, 2, np.ones((K, 2)), losses, _feedback(feedback))


def dyadic_weights(m: int) -> np.ndarray:
    return 0.5 ** np.arange(1, m + 1)


def dyadic_numerator(y: Sequence[int]) -> int:
    """``2^m * sum_i y_i 2^-i`` as an exact integer (``y`` indexed from 1)."""
    m = len(y)
    return sum(int(b) << (m - 1 - i) for i, b in enumerate(y))


def make_prop1(m: int, y_star: Sequence[int]) -> WtbInstance:
    """Two actions with weights ``2^-i``; action 1 is free only in the hidden context ``(1, y_star)``."""
    if m < 2:
        raise ParameterError("prop1 needs m >= 2")
    y_star = [int(b) for b in y_star]
    if len(y_star) != m - 1 or any(b not in (0, 1) for b in y_star):
        raise ParameterError(f"y_star must be a bit string of length {m - 1}")
    target = dyadic_numerator([1] + y_star)
    w = dyadic_weights(m)
    losses = [AffineLoss(1.0), DyadicMatchLoss(m, target, hit=0.0, miss=1.0)]
    return WtbInstance(2, m, np.tile(w, (2, 1)), losses, Feedback("deterministic"))


def make_adaptivity_pair(M: int, K: int) -> tuple[WtbInstance, WtbInstance]:
    """Two deterministic unweighted instances that differ only after ``M`` straight plays of action 1.

    In both, action 0 always costs 1/2 and actions 2.. always cost 1. In the
    first (``m = 1``) action 1 always costs 1; in the second (``m = M``) it
    costs 0 once it fills its window.
    """
    if K < 2 or M < 2:
        raise ParameterError("adaptivity pair needs K >= 2 and M >= 2")
    det = Feedback("deterministic")
    rest = [AffineLoss(1.0) for _ in range(K - 2)]
    tb_a = WtbInstance(K, 1, np.ones((K, 1)), [AffineLoss(0.5), AffineLoss(1.0)] + rest, det)
    tb_b = WtbInstance(K, M, np.ones((K, M)),
                       [AffineLoss(0.5), AffineLoss(1.0, 0.0, [(float(M), -1.0)])] + rest, det)
    return tb_a, tb_b


@dataclass(frozen=True)
class InstanceSpec:
    """Family name plus parameters, as they appear in an experiment config."""

    family: str
    parameters: dict[str, Any] = field(default_factory=dict)
    seed: int | None = None

    @property
    def randomized(self) -> bool:
        p = self.parameters
        return self.family == "darts" or (self.family == "f1" and "laps_csv" not in p) \
            or p.get("permute", False) or (self.family == "prop1" and "y_star" not in p)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "InstanceSpec":
        if "family" not in d:
            raise ParameterError("instance spec needs a 'family'")
        if d["family"] not in FAMILIES:
            raise ParameterError(f"unknown family {d['family']!r}; choose from {FAMILIES}")
        return cls(d["family"], dict(d.get("parameters", {})), d.get("seed"))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"family": self.family, "parameters": dict(self.parameters)}
        if self.seed is not None:
            d["seed"] = self.seed
        return d


def build_instance(spec: InstanceSpec, rng: np.random.Generator | None = None) -> WtbInstance:
    """Materialize a spec. Randomized families draw from ``rng`` (or ``spec.seed``)."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    p = spec.parameters
    fam = spec.family
    fb = p.get("feedback", "bernoulli")
    perm = int(rng.integers(2**31)) if p.get("permute", False) else None
    try:
        if fam == "synthetic-unweighted":
            return make_synthetic_unweighted(int(p["K"]), int(p["m"]), fb, perm)
        if fam == "synthetic-weighted":
            return make_synthetic_weighted(int(p["K"]), int(p["m"]), fb, perm)
        if fam == "synthetic-alpha":
            return make_synthetic_alpha(int(p["K"]), int(p["m"]), fb, perm)
        if fam == "darts":
            return make_darts(int(p.get("K", 20)), rng, fb)
        if fam == "prop1":
            m = int(p["m"])
            y_star = p.get("y_star")
            if y_star is None:
                y_star = rng.integers(0, 2, size=m - 1).tolist()
            return make_prop1(m, y_star)
        if fam == "adaptivity-pair":
            tb_a, tb_b = make_adaptivity_pair(int(p["M"]), int(p["K"]))
            return tb_b if p.get("which", "B") == "B" else tb_a
        if fam == "f1":
            from .f1fit import instance_from_spec
            return instance_from_spec(p, rng)
    except KeyError as exc:
        raise ParameterError(f"family {fam!r} needs parameter {exc.args[0]!r}") from None
    raise ParameterError(f"unknown family {fam!r}")
