"""Weighted tallying bandit environment.

An action's expected loss at time ``t`` is ``h_x(w_x . y)`` where ``y`` marks,
most recent first, which of the last ``m`` plays (current play included)
were ``x``. Before the game has ``m`` steps of history the missing positions
count as zero.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .errors import CapacityError, InvalidActionError, ParameterError
from .losses import is_unit_interval, loss_from_dict

REO_BRUTE_FORCE_CAP = 20
_VALIDATION_CAP = 16

FEEDBACK_KINDS = ("deterministic", "bernoulli", "clamped-gaussian")


@dataclass(frozen=True)
class Feedback:
    """Observation law around the expected loss.

    ``clamped-gaussian`` draws ``mean + std[x] * N(0, 1)`` and clips to
    ``[0, 1]``; the clipping introduces a small bias near the edges.
    Scalar and batched sampling consume the generator identically, so a run
    that plays a block at once matches one that plays it step by step.
    """

    kind: str = "bernoulli"
    std: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in FEEDBACK_KINDS:
            raise ParameterError(f"unknown feedback kind {self.kind!r}")
        if self.kind == "clamped-gaussian":
            if not self.std or any(not s > 0 for s in self.std):
                raise ParameterError("clamped-gaussian feedback needs a positive std per action")

    def sample(self, x: int, mean: float, rng: np.random.Generator) -> float:
        if self.kind == "deterministic":
            return mean
        if self.kind == "bernoulli":
            return 1.0 if rng.random() < mean else 0.0
        v = mean + self.std[x] * rng.standard_normal()
        return min(1.0, max(0.0, v))

    def sample_many(self, x: int, means: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "deterministic":
            return means.astype(float, copy=True)
        if self.kind == "bernoulli":
            return (rng.random(means.size) < means).astype(float)
        return np.clip(means + self.std[x] * rng.standard_normal(means.size), 0.0, 1.0)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind}
        if self.std is not None:
            d["params"] = {"std": list(self.std)}
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Feedback":
        std = d.get("params", {}).get("std")
        return cls(d["kind"], tuple(float(s) for s in std) if std is not None else None)


def contexts(m: int) -> np.ndarray:
    """All tally vectors in ``{1} x {0,1}^(m-1)`` as a ``(2**(m-1), m)`` 0/1 array."""
    codes = np.arange(2 ** (m - 1), dtype=np.int64)
    ys = np.ones((codes.size, m), dtype=np.int8)
    for i in range(1, m):
        ys[:, i] = (codes >> (m - 1 - i)) & 1
    return ys


def tally_value(w: np.ndarray, y) -> float:
    """``w . y`` summed in recency order; the single definition used everywhere."""
    total = 0.0
    for wi, yi in zip(w, y):
        if yi:
            total += wi
    return float(total)


@dataclass(frozen=True, eq=False)
class WtbInstance:
    """Immutable description of a weighted tallying bandit.

    Parameters
    ----------
    num_actions : int
        ``K``; actions are ``0..K-1``.
    memory_capacity : int
        ``m``, the window length.
    weights : array-like, shape (K, m)
        Per-action weight vectors with entries in ``(0, 1]``; column 0
        weights the current play.
    losses : sequence of callables
        ``losses[x](z)`` is the expected loss of ``x`` at weighted tally ``z``.
    feedback : Feedback
    horizon_hint : int, optional
    labels : sequence of str, optional
        Human-readable action names.
    """

    num_actions: int
    memory_capacity: int
    weights: np.ndarray
    losses: tuple
    feedback: Feedback = field(default_factory=Feedback)
    horizon_hint: int | None = None
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        K, m = self.num_actions, self.memory_capacity
        if K < 1 or m < 1:
            raise ParameterError("num_actions and memory_capacity must be positive")
        w = np.array(self.weights, dtype=float)
        if w.shape != (K, m):
            raise ParameterError(f"weights must have shape ({K}, {m}), got {w.shape}")
        if not np.all((w > 0) & (w <= 1)):
            raise ParameterError("weight entries must lie in (0, 1]")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "losses", tuple(self.losses))
        if len(self.losses) != K:
            raise ParameterError("need exactly one loss function per action")
        if self.feedback.kind == "clamped-gaussian" and len(self.feedback.std) != K:
            raise ParameterError("clamped-gaussian feedback needs one std per action")
        if self.horizon_hint is not None and self.horizon_hint < 1:
            raise ParameterError("horizon_hint must be positive")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != K:
                raise ParameterError("need one label per action")
        if m <= _VALIDATION_CAP:
            ys = contexts(m).astype(float)
            for x in range(K):
                vals = np.asarray(self.losses[x](ys @ self.weights[x]), dtype=float)
                if not np.all((vals >= 0) & (vals <= 1)):
                    raise ParameterError(f"loss of action {x} leaves [0, 1] on some context")

    @property
    def K(self) -> int:
        return self.num_actions

    @property
    def m(self) -> int:
        return self.memory_capacity

    def check_action(self, x: int) -> int:
        if not 0 <= x < self.num_actions:
            raise InvalidActionError(f"action {x} not in 0..{self.num_actions - 1}")
        return int(x)

    def loss_at(self, x: int, z: float) -> float:
        v = float(self.losses[x](z))
        if not is_unit_interval(v):
            raise ParameterError(f"loss {v} of action {x} at tally {z} leaves [0, 1]")
        return v

    def full_tally(self, x: int) -> float:
        return tally_value(self.weights[x], [1] * self.memory_capacity)

    # -- serialization --------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "K": self.num_actions,
            "m": self.memory_capacity,
            "weights": self.weights.tolist(),
            "losses": [loss.to_dict() for loss in self.losses],
            "feedback": self.feedback.to_dict(),
        }
        if self.horizon_hint is not None:
            d["T"] = self.horizon_hint
        if self.labels is not None:
            d["labels"] = list(self.labels)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "WtbInstance":
        try:
            return cls(
                num_actions=int(d["K"]),
                memory_capacity=int(d["m"]),
                weights=np.asarray(d["weights"], dtype=float),
                losses=tuple(loss_from_dict(e) for e in d["losses"]),
                feedback=Feedback.from_dict(d.get("feedback", {"kind": "bernoulli"})),
                horizon_hint=d.get("T"),
                labels=d.get("labels"),
            )
        except KeyError as exc:
            raise ParameterError(f"instance document misses field {exc.args[0]!r}") from None

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, source: str | Path) -> "WtbInstance":
        p = Path(source)
        text = p.read_text() if p.exists() else str(source)
        return cls.from_dict(json.loads(text))


class HistoryWindow:
    """The last ``m`` actions played, most recent last."""

    __slots__ = ("_buf",)

    def __init__(self, capacity: int, actions: Iterable[int] = ()) -> None:
        if capacity < 1:
            raise ParameterError("capacity must be positive")
        self._buf: deque[int] = deque(actions, maxlen=capacity)

    @property
    def capacity(self) -> int:
        return self._buf.maxlen

    @property
    def recent_actions(self) -> tuple[int, ...]:
        return tuple(self._buf)

    def append(self, x: int) -> None:
        self._buf.append(int(x))

    def extend(self, xs: Iterable[int]) -> None:
        self._buf.extend(int(x) for x in xs)

    def copy(self) -> "HistoryWindow":
        return HistoryWindow(self.capacity, self._buf)

    def __len__(self) -> int:
        return len(self._buf)

    def __iter__(self) -> Iterator[int]:
        return iter(self._buf)

    def __repr__(self) -> str:
        return f"HistoryWindow({self.capacity}, {list(self._buf)})"


@dataclass(frozen=True, slots=True)
class Observation:
    observed_loss: float
    expected_loss: float
    weighted_tally: float


def tally_vector(history: HistoryWindow | Sequence[int], x: int, m: int,
                 num_actions: int | None = None) -> tuple[int, ...]:
    """Indicator of ``x`` at each of the ``m`` most recent positions, newest first.

    Positions older than the start of the game are zero.
    """
    if x < 0 or (num_actions is not None and x >= num_actions):
        raise InvalidActionError(f"action {x} out of range")
    recent = list(history)
    y = [0] * m
    for i in range(min(m, len(recent))):
        y[i] = 1 if recent[-1 - i] == x else 0
    return tuple(y)


def weighted_tally(instance: WtbInstance, history: HistoryWindow, x: int) -> float:
    instance.check_action(x)
    y = tally_vector(history, x, instance.memory_capacity)
    return tally_value(instance.weights[x], y)


def expected_loss(instance: WtbInstance, history: HistoryWindow, x: int) -> float:
    """Expected loss of ``x`` given a window that already holds the current play."""
    return instance.loss_at(x, weighted_tally(instance, history, x))


def step(instance: WtbInstance, history: HistoryWindow, x: int,
         rng: np.random.Generator) -> Observation:
    """Play ``x``: append it to ``history`` and sample the feedback."""
    instance.check_action(x)
    history.append(x)
    z = weighted_tally(instance, history, x)
    mean = instance.loss_at(x, z)
    return Observation(instance.feedback.sample(x, mean, rng), mean, z)


def eventual_loss(instance: WtbInstance, x: int) -> float:
    """Loss of ``x`` once it has filled the whole window, ``h_x(|w_x|_1)``."""
    instance.check_action(x)
    return instance.loss_at(x, instance.full_tally(x))


def minimal_reo_alpha(instance: WtbInstance, cap: int = REO_BRUTE_FORCE_CAP) -> tuple[int, float]:
    """Smallest ``alpha`` for which the instance satisfies ``alpha``-REO.

    For each candidate ``x*`` this computes
    ``max(0, h_{x*}(|w_{x*}|_1) - min_{x, y} h_x(w_x . y))`` over every
    ``y`` in ``{1} x {0,1}^(m-1)``, exhaustively.

    Returns
    -------
    (best_action, alpha)
        Ties go to the lowest action index.

    Raises
    ------
    CapacityError
        If ``m`` exceeds ``cap``.
    """
    m = instance.memory_capacity
    if m > cap:
        raise CapacityError(f"m={m} exceeds the brute-force cap of {cap}")
    ys = contexts(m).astype(float)
    floor = min(float(np.min(instance.losses[x](ys @ instance.weights[x])))
                for x in range(instance.num_actions))
    best_x, best_alpha = 0, float("inf")
    for xs in range(instance.num_actions):
        alpha = max(0.0, eventual_loss(instance, xs) - floor)
        if alpha < best_alpha:
            best_x, best_alpha = xs, alpha
    return best_x, best_alpha


class Environment:
    """Stateful single-run wrapper: one history, one generator, one action log."""

    def __init__(self, instance: WtbInstance, rng: np.random.Generator) -> None:
        self.instance = instance
        self.rng = rng
        self.history = HistoryWindow(instance.memory_capacity)
        self._actions: list[np.ndarray] = []
        self._observed: list[np.ndarray] = []
        self._expected: list[np.ndarray] = []
        self.t = 0

    def step(self, x: int) -> Observation:
        obs = step(self.instance, self.history, x, self.rng)
        self._actions.append(np.array([x], dtype=np.int64))
        self._observed.append(np.array([obs.observed_loss]))
        self._expected.append(np.array([obs.expected_loss]))
        self.t += 1
        return obs

    def play(self, x: int, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Play ``x`` for ``n`` consecutive steps; returns (observed, expected).

        After ``m`` consecutive plays the tally is constant, so only the first
        ``min(n, m)`` steps need individual evaluation.
        """
        inst = self.instance
        inst.check_action(x)
        if n <= 0:
            return np.empty(0), np.empty(0)
        head = min(n, inst.memory_capacity)
        means = np.empty(n)
        for i in range(head):
            self.history.append(x)
            means[i] = inst.loss_at(x, weighted_tally(inst, self.history, x))
        if n > head:
            means[head:] = means[head - 1]
        observed = inst.feedback.sample_many(x, means, self.rng)
        self._actions.append(np.full(n, x, dtype=np.int64))
        self._observed.append(observed)
        self._expected.append(means)
        self.t += n
        return observed, means

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self._actions:
            return np.empty(0, dtype=np.int64), np.empty(0), np.empty(0)
        return (np.concatenate(self._actions), np.concatenate(self._observed),
                np.concatenate(self._expected))
