"""Exact optimal-policy values and complete policy regret on small instances."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .core import WtbInstance, eventual_loss, minimal_reo_alpha, tally_value
from .errors import CapacityError, ShapeError

DP_BUDGET = 10**8
BRUTE_FORCE_BUDGET = 10**6
_SEQUENCE_CELLS = 5 * 10**7
_PAD = -1


@dataclass(frozen=True)
class PolicyValue:
    """Minimum cumulative expected loss over all action sequences of length ``horizon``.

    ``prefix_values[t - 1]`` is the optimum for horizon ``t``; it is filled in
    by the dynamic program and left ``None`` by brute force.
    """

    value: float
    horizon: int
    optimal_sequence: tuple[int, ...] | None = None
    prefix_values: np.ndarray | None = None


@dataclass
class RunTrace:
    actions: np.ndarray
    observed_losses: np.ndarray
    expected_losses: np.ndarray
    seed: int = 0
    algorithm_id: str = ""

    def __post_init__(self) -> None:
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.observed_losses = np.asarray(self.observed_losses, dtype=float)
        self.expected_losses = np.asarray(self.expected_losses, dtype=float)
        n = self.actions.size
        if self.observed_losses.size != n or self.expected_losses.size != n:
            raise ShapeError("trace sequences must share one length")

    @property
    def T(self) -> int:
        return int(self.actions.size)

    def cumulative_expected(self) -> np.ndarray:
        return np.cumsum(self.expected_losses)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "action", "observed_loss", "expected_loss"])
            for t, (a, o, e) in enumerate(zip(self.actions.tolist(), self.observed_losses.tolist(),
                                              self.expected_losses.tolist()), start=1):
                writer.writerow([t, a, repr(o), repr(e)])

    @classmethod
    def from_csv(cls, path: str | Path, seed: int = 0, algorithm_id: str = "") -> "RunTrace":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(np.array([int(r["action"]) for r in rows], dtype=np.int64),
                   np.array([float(r["observed_loss"]) for r in rows]),
                   np.array([float(r["expected_loss"]) for r in rows]),
                   seed, algorithm_id)


def _dp_tables(instance: WtbInstance):
    """Enumerate padded windows of the last ``m - 1`` actions and their transitions."""
    K, m = instance.num_actions, instance.memory_capacity
    states: list[tuple[int, ...]] = []
    for pad in range(m - 1, -1, -1):
        for tail in product(range(K), repeat=m - 1 - pad):
            states.append((_PAD,) * pad + tail)
    index = {s: i for i, s in enumerate(states)}
    S = len(states)
    cost = np.empty((S, K))
    nxt = np.empty((S, K), dtype=np.int64)
    for i, s in enumerate(states):
        for a in range(K):
            window = s + (a,)
            y = [1 if window[-1 - j] == a else 0 for j in range(m)]
            cost[i, a] = instance.loss_at(a, tally_value(instance.weights[a], y))
            nxt[i, a] = index[window[1:]]
    return states, cost, nxt


def optimal_value_dp(instance: WtbInstance, T: int, budget: int = DP_BUDGET,
                     with_sequence: bool = True) -> PolicyValue:
    """Exact optimum by dynamic programming over the last ``m - 1`` actions.

    A forward pass yields the optimum for every prefix horizon; a backward
    pass (only when ``with_sequence``) recovers the lexicographically smallest
    optimal action sequence.
    """
    K, m = instance.num_actions, instance.memory_capacity
    if T < 1:
        raise ValueError("T must be positive")
    if K**m * T > budget:
        raise CapacityError(f"K^m * T = {K**m * T} exceeds the DP budget {budget}")
    states, cost, nxt = _dp_tables(instance)
    S = len(states)
    init = 0  # fully padded window is enumerated first

    # predecessor lists for the forward pass, padded with a sentinel pair
    flat_next = nxt.ravel()
    preds: list[list[int]] = [[] for _ in range(S)]
    for p, s2 in enumerate(flat_next.tolist()):
        preds[s2].append(p)
    width = max(len(p) for p in preds)
    sentinel = S * K
    pred = np.full((S, width), sentinel, dtype=np.int64)
    for s2, ps in enumerate(preds):
        pred[s2, :len(ps)] = ps
    src = np.repeat(np.arange(S), K)
    flat_cost = cost.ravel()

    v = np.full(S, np.inf)
    v[init] = 0.0
    prefix = np.empty(T)
    cand = np.empty(S * K + 1)
    cand[sentinel] = np.inf
    for t in range(T):
        cand[:sentinel] = v[src] + flat_cost
        v = cand[pred].min(axis=1)
        prefix[t] = v.min()

    sequence = None
    if with_sequence and T * S <= _SEQUENCE_CELLS:
        sequence = _lexicographic_argmin(cost, nxt, init, T)
    return PolicyValue(float(prefix[-1]), T, sequence, prefix)


def _lexicographic_argmin(cost: np.ndarray, nxt: np.ndarray, init: int, T: int) -> tuple[int, ...]:
    S, K = cost.shape
    dtype = np.int16 if K < 2**15 else np.int64
    choice = np.empty((T, S), dtype=dtype)
    j = np.zeros(S)
    eps = 1e-12 * max(1.0, T)
    for t in range(T - 1, -1, -1):
        q = cost + j[nxt]
        best = q.min(axis=1)
        # first action within float noise of the minimum
        choice[t] = np.argmax(q <= (best + eps)[:, None], axis=1)
        j = best
    seq = []
    s = init
    for t in range(T):
        a = int(choice[t, s])
        seq.append(a)
        s = int(nxt[s, a])
    return tuple(seq)


def optimal_value_bruteforce(instance: WtbInstance, T: int,
                             budget: int = BRUTE_FORCE_BUDGET) -> PolicyValue:
    """Exact optimum by scoring every one of the ``K**T`` sequences.

    Sequences are enumerated in lexicographic order, so the first minimizer
    is the lexicographically smallest one.
    """
    K, m = instance.num_actions, instance.memory_capacity
    if K**T > budget:
        raise CapacityError(f"K^T = {K**T} exceeds the brute-force budget {budget}")
    codes = np.arange(K**T, dtype=np.int64)
    seqs = np.empty((codes.size, T), dtype=np.int64)
    for t in range(T):
        seqs[:, t] = (codes // K ** (T - 1 - t)) % K
    total = np.zeros(codes.size)
    for t in range(T):
        a = seqs[:, t]
        z = np.zeros(codes.size)
        for i in range(m):
            if t - i < 0:
                break
            hit = seqs[:, t - i] == a
            z = z + np.where(hit, instance.weights[a, i], 0.0)
        step_loss = np.empty(codes.size)
        for x in range(K):
            mask = a == x
            if mask.any():
                step_loss[mask] = instance.losses[x](z[mask])
        total += step_loss
    k = int(np.argmin(total))
    return PolicyValue(float(total[k]), T, tuple(int(v) for v in seqs[k]))


def cpr(trace: RunTrace, optimal: PolicyValue, tol: float = 1e-9) -> float:
    """Complete policy regret: the trace's cumulative expected loss minus the optimum.

    Differences within ``tol`` below zero are float noise and reported as 0.
    """
    if trace.T != optimal.horizon:
        raise ShapeError(f"trace has {trace.T} steps but the optimum is for T={optimal.horizon}")
    r = float(trace.cumulative_expected()[-1]) - optimal.value
    if -tol * max(1, trace.T) <= r < 0:
        return 0.0
    return r


def cpr_curve(trace: RunTrace, optimal: PolicyValue) -> np.ndarray:
    """Regret of every prefix of the trace against the optimum for that prefix."""
    if optimal.prefix_values is None or optimal.prefix_values.size < trace.T:
        raise ShapeError("optimum lacks prefix values for the whole trace")
    return trace.cumulative_expected() - optimal.prefix_values[:trace.T]


def reo_floor_check(instance: WtbInstance, T: int, tol: float = 1e-9) -> bool:
    """Whether the optimum is at least ``T * (mu(x*) - alpha)``.

    Every step of any policy loses at least ``mu(x*) - alpha`` under
    ``alpha``-REO, so this must hold on every valid instance.
    """
    x_star, alpha = minimal_reo_alpha(instance)
    opt = optimal_value_dp(instance, T, with_sequence=False)
    floor = T * eventual_loss(instance, x_star) - alpha * T
    return opt.value >= floor - tol * T
