"""Successive elimination for weighted tallying bandits, plus three baselines.

All runners take an :class:`~wtblab.core.Environment` (which owns the
feedback generator) and, where the algorithm itself randomizes, a separate
generator for its own choices. Every runner emits exactly ``T`` steps.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .core import Environment, WtbInstance
from .errors import ParameterError
from .oracle import RunTrace

ANYTIME_DELTA_MAX = 0.009


@dataclass(frozen=True)
class EpochSchedule:
    """Epoch count and the per-epoch pull/radius rules of successive elimination.

    ``n_s = ceil(K M 2^s / |A_s|)`` depends on how many actions survive, so it
    is evaluated per epoch through :meth:`pulls`.
    """

    num_epochs: int
    T: int
    M: int
    K: int
    delta: float
    anytime: bool = False

    def pulls(self, s: int, num_active: int) -> int:
        return math.ceil(self.K * self.M * 2**s / num_active)

    def radius(self, s: int, num_active: int) -> float:
        n = self.pulls(s, num_active)
        if self.anytime:
            return math.sqrt(64.0 / n * math.log(2 * self.K / self.delta))
        return math.sqrt(32.0 / n * math.log(2 * self.K * self.num_epochs / self.delta))

    def epoch_length(self, s: int, num_active: int) -> int:
        return 2 * num_active * self.pulls(s, num_active)


def se_schedule(T: int, M: int, K: int, delta: float, anytime: bool = False) -> EpochSchedule:
    """Build the schedule; ``S = floor(log2(T / (4 K M) + 1))``, at least 1.

    With ``anytime`` the radius drops its dependence on ``S`` and ``delta``
    must be below 0.009.
    """
    if not 0 < delta < 1:
        raise ParameterError("delta must lie in (0, 1)")
    if anytime and not delta < ANYTIME_DELTA_MAX:
        raise ParameterError(f"the horizon-free radius needs delta < {ANYTIME_DELTA_MAX}")
    if T < 1 or M < 1 or K < 1:
        raise ParameterError("T, M and K must be positive")
    if M > T:
        raise ParameterError("M must not exceed T")
    if 4 * K * M >= T:
        warnings.warn(f"4KM = {4 * K * M} >= T = {T}: schedule degenerates to a single epoch",
                      stacklevel=2)
    S = max(1, math.floor(math.log2(T / (4 * K * M) + 1)))
    return EpochSchedule(S, T, M, K, float(delta), anytime)


@dataclass
class SeEpoch:
    """What one completed elimination epoch saw and decided."""

    s: int
    active: tuple[int, ...]
    pulls: int
    radius: float
    estimates: dict[int, float]
    incumbent: int
    survivors: tuple[int, ...]


@dataclass
class SeRun:
    trace: RunTrace
    surviving: tuple[int, ...]
    schedule: EpochSchedule
    epochs: list[SeEpoch] = field(default_factory=list)
    incumbent: int = 0

    def __iter__(self):
        # unpacks as (trace, surviving)
        return iter((self.trace, self.surviving))


def run_se(env: Environment, T: int, M: int, delta: float = 0.1, anytime: bool = False,
           seed: int = 0) -> SeRun:
    """Successive elimination over eventual losses.

    Each epoch plays every surviving action ``n_s`` times unrecorded (to fill
    its window) and ``n_s`` times recorded, then drops every action whose
    recorded mean exceeds the best one by more than ``2 C_s``. An epoch that
    does not fit in the remaining horizon is skipped, and the incumbent plays
    out the horizon.
    """
    K = env.instance.num_actions
    sched = se_schedule(T, M, K, delta, anytime)
    active = list(range(K))
    incumbent = active[0]
    epochs: list[SeEpoch] = []
    for s in range(1, sched.num_epochs + 1):
        n = sched.pulls(s, len(active))
        if env.t + sched.epoch_length(s, len(active)) > T:
            break
        est: dict[int, float] = {}
        for x in active:
            env.play(x, n)
            observed, _ = env.play(x, n)
            est[x] = float(observed.mean())
        incumbent = min(active, key=lambda a: (est[a], a))
        c = sched.radius(s, len(active))
        survivors = [x for x in active if est[x] <= est[incumbent] + 2 * c]
        epochs.append(SeEpoch(s, tuple(active), n, c, est, incumbent, tuple(survivors)))
        active = survivors
    env.play(incumbent, T - env.t)
    actions, observed, expected = env.arrays()
    trace = RunTrace(actions, observed, expected, seed, "se")
    return SeRun(trace, tuple(active), sched, epochs, incumbent)


class Exp3State:
    """Exponential weights over importance-weighted loss estimates.

    Probabilities are ``(1 - mix) * softmax(-lr * L) + mix / K``. With
    ``mix = 0`` underflowing entries are raised to the smallest positive
    float so every action keeps positive probability.
    """

    def __init__(self, K: int, learning_rate: float, exploration_mix: float = 0.0) -> None:
        if K < 1:
            raise ParameterError("K must be positive")
        if learning_rate < 0 or not 0 <= exploration_mix <= 1:
            raise ParameterError("invalid EXP3 parameters")
        self.K = K
        self.learning_rate = float(learning_rate)
        self.exploration_mix = float(exploration_mix)
        self.cum_loss = np.zeros(K)

    def probabilities(self) -> np.ndarray:
        logits = -self.learning_rate * self.cum_loss
        p = np.exp(logits - logits.max())
        p /= p.sum()
        if self.exploration_mix:
            p = (1 - self.exploration_mix) * p + self.exploration_mix / self.K
        if p.min() <= 0:
            p = np.maximum(p, np.finfo(float).tiny)
            p /= p.sum()
        return p

    def sample(self, rng: np.random.Generator) -> tuple[int, float]:
        p = self.probabilities()
        a = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
        a = min(a, self.K - 1)
        return a, float(p[a])

    def update(self, action: int, loss: float, prob: float) -> None:
        self.cum_loss[action] += loss / prob


def default_exp3_rate(K: int, rounds: int) -> float:
    return math.sqrt(2 * math.log(K) / (rounds * K)) if K > 1 else 0.0


def run_exp3(env: Environment, T: int, rng: np.random.Generator,
             learning_rate: float | None = None, seed: int = 0) -> RunTrace:
    K = env.instance.num_actions
    state = Exp3State(K, default_exp3_rate(K, T) if learning_rate is None else learning_rate)
    for _ in range(T):
        a, p = state.sample(rng)
        obs = env.step(a)
        state.update(a, obs.observed_loss, p)
    actions, observed, expected = env.arrays()
    return RunTrace(actions, observed, expected, seed, "exp3")


def run_exp3_batched(env: Environment, T: int, M: int, rng: np.random.Generator,
                     learning_rate: float | None = None, seed: int = 0) -> RunTrace:
    """EXP3 over blocks of ``2M`` identical plays.

    The first ``M`` plays of a block warm the window; the mean of the last
    ``M`` observations is the block's loss. A trailing partial block plays a
    fresh sample without updating.
    """
    K = env.instance.num_actions
    block = 2 * M
    if M < 1 or block > T:
        raise ParameterError("batched EXP3 needs 1 <= 2M <= T")
    rounds = T // block
    state = Exp3State(K, default_exp3_rate(K, rounds) if learning_rate is None else learning_rate)
    for _ in range(rounds):
        a, p = state.sample(rng)
        observed, _ = env.play(a, block)
        state.update(a, float(observed[M:].mean()), p)
    if env.t < T:
        a, _ = state.sample(rng)
        env.play(a, T - env.t)
    actions, observed, expected = env.arrays()
    return RunTrace(actions, observed, expected, seed, "exp3-batched")


def run_epoch_ucb(env: Environment, T: int, M: int, rng: np.random.Generator | None = None,
                  seed: int = 0) -> RunTrace:
    """UCB (for losses) over epochs of ``M`` repeated plays.

    Only the last observation of each epoch is recorded. The index is
    ``mean - sqrt(2 ln e / n)`` with ``e`` the number of recorded epochs so
    far, so ``M = 1`` is textbook UCB1. Unvisited actions go first, in index
    order. ``rng`` is accepted for interface symmetry and not used.
    """
    del rng
    K = env.instance.num_actions
    if M < 1 or M > T:
        raise ParameterError("epoch UCB needs 1 <= M <= T")
    counts = np.zeros(K, dtype=np.int64)
    sums = np.zeros(K)
    epochs = 0
    while env.t < T:
        unvisited = np.flatnonzero(counts == 0)
        if unvisited.size:
            a = int(unvisited[0])
        else:
            index = sums / counts - np.sqrt(2 * math.log(epochs) / counts)
            a = int(np.argmin(index))
        observed, _ = env.play(a, min(M, T - env.t))
        counts[a] += 1
        sums[a] += observed[-1]
        epochs += 1
    actions, observed, expected = env.arrays()
    return RunTrace(actions, observed, expected, seed, "epoch-ucb")


def run_fixed(env: Environment, T: int, action: int, seed: int = 0) -> RunTrace:
    """Play one action for the whole horizon."""
    env.play(action, T)
    actions, observed, expected = env.arrays()
    return RunTrace(actions, observed, expected, seed, f"always-{action}")


def run_sequence(env: Environment, sequence, seed: int = 0, algorithm_id: str = "sequence") -> RunTrace:
    """Replay a fixed action sequence step by step."""
    for a in sequence:
        env.step(int(a))
    actions, observed, expected = env.arrays()
    return RunTrace(actions, observed, expected, seed, algorithm_id)


ALGORITHMS = ("se", "exp3", "exp3-batched", "epoch-ucb")


def run_algorithm(name: str, instance: WtbInstance, T: int, params: dict[str, Any],
                  env_rng: np.random.Generator, alg_rng: np.random.Generator,
                  seed: int = 0) -> RunTrace:
    """Dispatch by registry name; ``params`` carries ``M``, ``delta``, ``learning_rate`` ..."""
    env = Environment(instance, env_rng)
    M = int(params.get("M", instance.memory_capacity))
    runners: dict[str, Callable[[], RunTrace]] = {
        "se": lambda: run_se(env, T, M, params.get("delta", 0.1),
                             params.get("anytime", False), seed).trace,
        "exp3": lambda: run_exp3(env, T, alg_rng, params.get("learning_rate"), seed),
        "exp3-batched": lambda: run_exp3_batched(env, T, M, alg_rng,
                                                 params.get("learning_rate"), seed),
        "epoch-ucb": lambda: run_epoch_ucb(env, T, M, alg_rng, seed),
    }
    if name.startswith("always-"):
        return run_fixed(env, T, int(name.split("-", 1)[1]), seed)
    if name not in runners:
        raise ParameterError(f"unknown algorithm {name!r}")
    return runners[name]()
