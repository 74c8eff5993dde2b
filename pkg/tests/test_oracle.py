import numpy as np
import pytest

from wtblab.algorithms import run_sequence
from wtblab.core import Environment, Feedback, WtbInstance
from wtblab.errors import CapacityError, ShapeError
from wtblab.instances import make_prop1, make_synthetic_alpha, make_synthetic_unweighted
from wtblab.losses import AffineLoss, TallyTable
from wtblab.oracle import (RunTrace, cpr, cpr_curve, optimal_value_bruteforce, optimal_value_dp,
                           reo_floor_check)


def _replay_value(inst, seq):
    env = Environment(inst, np.random.default_rng(0))
    return float(run_sequence(env, seq).expected_losses.sum())


def random_table_instance(rng, K, m):
    w = rng.uniform(0.05, 1.0, size=(K, m))
    losses = []
    for x in range(K):
        zs = sorted({float(sum(wi for wi, b in zip(w[x], (1,) + tail) if b))
                     for tail in np.ndindex(*(2,) * (m - 1))})
        losses.append(TallyTable(zs, rng.uniform(0, 1, len(zs))))
    return WtbInstance(K, m, w, losses, Feedback("deterministic"))


class TestOptimalValue:
    def test_unweighted_k2_m2_t5(self):
        inst = make_synthetic_unweighted(2, 2)
        assert optimal_value_dp(inst, 5).value == pytest.approx(1.9, abs=1e-12)
        assert optimal_value_bruteforce(inst, 5).value == pytest.approx(1.9, abs=1e-12)

    def test_single_step(self):
        inst = make_synthetic_alpha(3, 3)
        first = min(inst.losses[x](inst.weights[x][0]) for x in range(3))
        assert optimal_value_dp(inst, 1).value == pytest.approx(first)

    def test_prop1_cyclic(self):
        inst = make_prop1(3, (1, 0))
        dp = optimal_value_dp(inst, 6)
        assert dp.value == 4.0
        assert dp.optimal_sequence == (0, 1, 1, 0, 1, 1)
        assert optimal_value_bruteforce(inst, 6).value == 4.0
        assert _replay_value(inst, dp.optimal_sequence) == 4.0

    @pytest.mark.parametrize("T", range(1, 11))
    def test_dp_matches_bruteforce_unweighted(self, T):
        inst = make_synthetic_unweighted(2, 2)
        assert optimal_value_dp(inst, T).value == pytest.approx(
            optimal_value_bruteforce(inst, T).value, abs=1e-12)

    @pytest.mark.parametrize("T", range(1, 9))
    def test_dp_matches_bruteforce_prop1(self, T):
        inst = make_prop1(3, (1, 0))
        assert optimal_value_dp(inst, T).value == optimal_value_bruteforce(inst, T).value

    def test_single_action(self):
        inst = WtbInstance(1, 3, np.ones((1, 3)), [AffineLoss(0.9, -0.2)])
        # tallies 1, 2, 3, 3, ...
        expect = 0.7 + 0.5 + 0.3 * 5
        assert optimal_value_dp(inst, 7).value == pytest.approx(expect)
        assert optimal_value_bruteforce(inst, 7).value == pytest.approx(expect)

    def test_random_instances_and_sequences(self):
        rng = np.random.default_rng(123)
        for _ in range(20):
            K, m, T = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 9))
            inst = random_table_instance(rng, K, m)
            dp = optimal_value_dp(inst, T)
            bf = optimal_value_bruteforce(inst, T)
            assert dp.value == pytest.approx(bf.value, abs=1e-12)
            assert _replay_value(inst, dp.optimal_sequence) == pytest.approx(dp.value, abs=1e-12)
            assert _replay_value(inst, bf.optimal_sequence) == pytest.approx(bf.value, abs=1e-12)

    def test_prefix_values_are_optima_and_monotone(self):
        inst = make_synthetic_alpha(3, 3)
        dp = optimal_value_dp(inst, 9)
        for T in range(1, 10):
            assert dp.prefix_values[T - 1] == pytest.approx(optimal_value_bruteforce(inst, T).value,
                                                            abs=1e-12)
        assert np.all(np.diff(dp.prefix_values) >= 0)

    def test_value_below_explicit_policies(self):
        inst = make_synthetic_alpha(3, 2)
        v = optimal_value_dp(inst, 12).value
        rng = np.random.default_rng(1)
        for _ in range(30):
            seq = rng.integers(0, 3, size=12)
            assert v <= _replay_value(inst, seq) + 1e-12
        assert v >= 0

    def test_budgets(self):
        inst = make_synthetic_unweighted(5, 3)
        with pytest.raises(CapacityError):
            optimal_value_dp(inst, 10**6, budget=10**7)
        with pytest.raises(CapacityError):
            optimal_value_bruteforce(inst, 10)


class TestCpr:
    def test_optimal_replay_is_zero(self):
        inst = make_prop1(3, (1, 0))
        opt = optimal_value_dp(inst, 9)
        tr = run_sequence(Environment(inst, np.random.default_rng(0)), opt.optimal_sequence)
        assert cpr(tr, opt) == 0.0
        assert np.all(cpr_curve(tr, opt) >= -1e-12)

    def test_suboptimal_arm(self):
        inst = make_synthetic_unweighted(2, 2)
        opt = optimal_value_dp(inst, 5)
        tr = run_sequence(Environment(inst, np.random.default_rng(0)), [1] * 5)
        assert cpr(tr, opt) == pytest.approx(0.6)

    def test_nonnegative_on_random_traces(self):
        inst = make_synthetic_alpha(4, 3)
        opt = optimal_value_dp(inst, 50)
        rng = np.random.default_rng(4)
        for _ in range(20):
            tr = run_sequence(Environment(inst, rng), rng.integers(0, 4, size=50))
            assert 0 <= cpr(tr, opt) <= 50

    def test_horizon_mismatch(self):
        inst = make_synthetic_unweighted(2, 2)
        tr = run_sequence(Environment(inst, np.random.default_rng(0)), [0, 0, 0])
        with pytest.raises(ShapeError):
            cpr(tr, optimal_value_dp(inst, 4))

    def test_trace_csv_round_trip(self, tmp_path):
        inst = make_synthetic_unweighted(3, 2)
        tr = run_sequence(Environment(inst, np.random.default_rng(2)), [0, 1, 2, 0, 0, 0])
        tr.to_csv(tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t,action,observed_loss,expected_loss"
        back = RunTrace.from_csv(tmp_path / "t.csv")
        np.testing.assert_array_equal(back.actions, tr.actions)
        np.testing.assert_array_equal(back.observed_losses, tr.observed_losses)
        np.testing.assert_array_equal(back.expected_losses, tr.expected_losses)

    def test_trace_shape_check(self):
        with pytest.raises(ShapeError):
            RunTrace([0, 1], [0.5], [0.5, 0.5])


class TestReoFloor:
    def test_unweighted(self):
        inst = make_synthetic_unweighted(2, 2)
        assert optimal_value_dp(inst, 20).value == pytest.approx(7.15)
        assert reo_floor_check(inst, 20)

    def test_smab_equality(self):
        inst = WtbInstance(2, 1, np.ones((2, 1)), [AffineLoss(0.3), AffineLoss(0.6)])
        assert optimal_value_dp(inst, 40).value == pytest.approx(40 * 0.3)
        assert reo_floor_check(inst, 40)

    def test_alpha_instance(self):
        assert reo_floor_check(make_synthetic_alpha(3, 4), 16)
