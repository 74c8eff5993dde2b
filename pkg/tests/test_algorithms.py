import math

import numpy as np
import pytest

from wtblab import algorithms
from wtblab.algorithms import (ALGORITHMS, Exp3State, run_algorithm, run_epoch_ucb, run_exp3,
                               run_exp3_batched, run_se, se_schedule)
from wtblab.core import Environment, Feedback, WtbInstance, eventual_loss
from wtblab.errors import ParameterError
from wtblab.instances import make_synthetic_unweighted
from wtblab.losses import AffineLoss


def env_for(inst, seed=0):
    return Environment(inst, np.random.default_rng(seed))


def two_arm(l0, l1):
    return WtbInstance(2, 1, np.ones((2, 1)), [AffineLoss(l0), AffineLoss(l1)], Feedback("deterministic"))


class TestSchedule:
    def test_large_horizon_numbers(self):
        s = se_schedule(10**6, 3, 5, 0.1)
        assert s.num_epochs == 14
        assert s.pulls(1, 5) == 6
        assert s.radius(1, 5) == pytest.approx(math.sqrt(32 / 6 * math.log(2 * 5 * 14 / 0.1)))
        assert s.radius(1, 5) == pytest.approx(6.22, abs=0.005)

    def test_first_epoch_pulls_two_m(self):
        for K, M in [(2, 2), (5, 3), (7, 11)]:
            assert se_schedule(10**7, M, K, 0.1).pulls(1, K) == 2 * M

    def test_pulls_cover_window(self):
        s = se_schedule(10**5, 4, 6, 0.1)
        for s_idx in range(1, s.num_epochs + 1):
            for active in range(1, 7):
                assert s.pulls(s_idx, active) >= 4

    def test_anytime_radius(self):
        s = se_schedule(10**5, 3, 4, 0.005, anytime=True)
        assert s.radius(2, 4) == pytest.approx(math.sqrt(64 / s.pulls(2, 4) * math.log(8 / 0.005)))
        with pytest.raises(ParameterError):
            se_schedule(10**5, 3, 4, 0.01, anytime=True)

    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.1, 2.0])
    def test_bad_delta(self, delta):
        with pytest.raises(ParameterError):
            se_schedule(1000, 2, 2, delta)

    def test_degenerate_warns(self):
        with pytest.warns(UserWarning):
            s = se_schedule(100, 5, 5, 0.1)
        assert s.num_epochs == 1

    def test_M_above_T(self):
        with pytest.raises(ParameterError):
            se_schedule(10, 11, 2, 0.1)


class TestSuccessiveElimination:
    def test_deterministic_elimination(self):
        inst = make_synthetic_unweighted(2, 2, feedback="deterministic")
        run = run_se(env_for(inst), 10**6, 2, 0.1)
        assert run.surviving == (0,)
        first = next(e for e in run.epochs if 2 * e.radius < 0.15)
        assert first.survivors == (0,)
        assert all(e.survivors == (0, 1) for e in run.epochs if e.s < first.s)
        tail_start = sum(2 * len(e.active) * e.pulls for e in run.epochs)
        assert np.all(run.trace.actions[tail_start:] == 0)

    def test_short_horizon_keeps_everything(self):
        # at T=1000 no radius gets below the 0.075 half-gap, so nothing may be dropped
        inst = make_synthetic_unweighted(2, 2, feedback="deterministic")
        run = run_se(env_for(inst), 1000, 2, 0.1)
        assert all(2 * e.radius >= 0.15 for e in run.epochs)
        assert run.surviving == (0, 1)
        assert run.trace.T == 1000

    def test_single_action(self):
        inst = WtbInstance(1, 2, np.ones((1, 2)), [AffineLoss(0.4)])
        trace, surviving = run_se(env_for(inst), 50, 2, 0.1)
        assert surviving == (0,)
        assert np.all(trace.actions == 0) and trace.T == 50

    def test_epoch_structure(self):
        inst = make_synthetic_unweighted(3, 2)
        run = run_se(env_for(inst, 3), 5000, 2, 0.1)
        pos = 0
        acts = run.trace.actions
        for e in run.epochs:
            for x in e.active:
                assert np.all(acts[pos:pos + 2 * e.pulls] == x)
                pos += 2 * e.pulls
        assert np.all(acts[pos:] == run.incumbent)

    def test_monotone_and_incumbent_survives(self):
        inst = make_synthetic_unweighted(4, 2)
        for seed in range(5):
            run = run_se(env_for(inst, seed), 10**6, 2, 0.1)
            for e in run.epochs:
                assert set(e.survivors) <= set(e.active)
                assert e.incumbent in e.survivors
                assert e.incumbent == min(e.active, key=lambda a: (e.estimates[a], a))
                assert all(0 <= v <= 1 for v in e.estimates.values())

    @pytest.mark.parametrize("T", [40, 48, 1000, 12345])
    def test_epochs_fit_in_horizon(self, T):
        inst = make_synthetic_unweighted(2, 2)
        run = run_se(env_for(inst, T), T, 2, 0.1)
        used = sum(2 * len(e.active) * e.pulls for e in run.epochs)
        assert used <= T and run.trace.T == T
        assert len(run.epochs) == run.schedule.num_epochs


class TestExp3:
    def test_zero_loss_is_identity(self):
        st = Exp3State(3, 0.2)
        st.update(1, 0.7, 0.4)
        before = st.probabilities()
        st.update(2, 0.0, 0.3)
        np.testing.assert_array_equal(before, st.probabilities())

    def test_distribution_normalized_and_positive(self):
        st = Exp3State(4, 5.0)
        rng = np.random.default_rng(0)
        for _ in range(2000):
            a, p = st.sample(rng)
            st.update(a, float(rng.random()), p)
            probs = st.probabilities()
            assert abs(probs.sum() - 1) <= 1e-12
            assert np.all(probs > 0)

    def test_single_action(self):
        inst = WtbInstance(1, 1, np.ones((1, 1)), [AffineLoss(0.3)])
        tr = run_exp3(env_for(inst), 100, np.random.default_rng(0))
        assert np.all(tr.actions == 0)

    def test_learns_two_arms(self):
        tr = run_exp3(env_for(two_arm(0.0, 1.0)), 10**4, np.random.default_rng(1))
        assert np.mean(tr.actions == 0) > 0.9

    def test_batched_block_count(self, monkeypatch):
        fed = []
        orig = Exp3State.update
        monkeypatch.setattr(Exp3State, "update", lambda s, a, l, p: (fed.append(l), orig(s, a, l, p)))
        inst = make_synthetic_unweighted(2, 3, feedback="deterministic")
        tr = run_exp3_batched(env_for(inst), 12, 3, np.random.default_rng(0))
        assert len(fed) == 2 and tr.T == 12

    def test_batched_feeds_eventual_loss(self, monkeypatch):
        fed = []
        orig = Exp3State.update
        monkeypatch.setattr(Exp3State, "update",
                            lambda s, a, l, p: (fed.append((a, l)), orig(s, a, l, p)))
        inst = make_synthetic_unweighted(4, 3, feedback="deterministic")
        run_exp3_batched(env_for(inst), 600, 3, np.random.default_rng(2))
        assert len(fed) == 100
        for a, loss in fed:
            assert loss == pytest.approx(eventual_loss(inst, a), abs=1e-15)

    def test_batched_blocks_are_constant(self):
        inst = make_synthetic_unweighted(3, 2)
        tr = run_exp3_batched(env_for(inst), 103, 2, np.random.default_rng(5))
        blocks = tr.actions[:100].reshape(-1, 4)
        assert np.all(blocks == blocks[:, :1])
        assert np.all(tr.actions[100:] == tr.actions[100])

    def test_batched_single_action(self):
        inst = WtbInstance(1, 2, np.ones((1, 2)), [AffineLoss(0.3)])
        assert np.all(run_exp3_batched(env_for(inst), 21, 2, np.random.default_rng(0)).actions == 0)


class TestEpochUcb:
    def test_initial_sweep(self):
        inst = make_synthetic_unweighted(4, 2)
        tr = run_epoch_ucb(env_for(inst), 100, 3)
        assert tr.actions[:12].tolist() == [0] * 3 + [1] * 3 + [2] * 3 + [3] * 3

    def test_deterministic_prefers_best(self):
        inst = make_synthetic_unweighted(3, 3, feedback="deterministic")
        tr = run_epoch_ucb(env_for(inst), 3000, 3)
        # recorded losses are eventual losses, so the first post-sweep pick is x*; the
        # bonus still sends later epochs back to the others now and then
        assert tr.actions[9:12].tolist() == [0, 0, 0]
        assert np.mean(tr.actions == 0) > 0.5

    def test_m1_is_ucb1(self):
        inst = WtbInstance(3, 1, np.ones((3, 1)), [AffineLoss(0.2), AffineLoss(0.5), AffineLoss(0.6)])
        env = env_for(inst, 4)
        tr = run_epoch_ucb(env, 200, 1)
        # replay the UCB1 rule on the recorded observations
        counts, sums = np.zeros(3), np.zeros(3)
        for t, (a, o) in enumerate(zip(tr.actions.tolist(), tr.observed_losses.tolist())):
            if t < 3:
                expect = t
            else:
                expect = int(np.argmin(sums / counts - np.sqrt(2 * math.log(t) / counts)))
            assert a == expect
            counts[a] += 1
            sums[a] += o

    def test_partial_last_epoch(self):
        inst = make_synthetic_unweighted(2, 3)
        assert run_epoch_ucb(env_for(inst), 101, 3).T == 101


class TestRegistry:
    @pytest.mark.parametrize("name", list(ALGORITHMS) + ["always-1"])
    def test_exact_length_and_determinism(self, name):
        inst = make_synthetic_unweighted(3, 2)
        traces = [run_algorithm(name, inst, 777, {"M": 2}, np.random.default_rng(1),
                                np.random.default_rng(2)) for _ in range(2)]
        assert traces[0].T == 777
        np.testing.assert_array_equal(traces[0].actions, traces[1].actions)
        np.testing.assert_array_equal(traces[0].observed_losses, traces[1].observed_losses)

    def test_unknown(self):
        inst = make_synthetic_unweighted(2, 2)
        with pytest.raises(ParameterError):
            run_algorithm("ucb-v", inst, 10, {}, np.random.default_rng(0), np.random.default_rng(0))

    def test_default_rate(self):
        assert algorithms.default_exp3_rate(4, 100) == pytest.approx(math.sqrt(2 * math.log(4) / 400))
