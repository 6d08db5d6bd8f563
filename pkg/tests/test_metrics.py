"""Assignment matching, accuracy, parameter MSE, Monte-Carlo harness."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ihmp.metrics import (accuracy, error_probability, match_labels,
                          monte_carlo, mse_means, munkres_assign)
from ihmp.simulate import error_scenario_params, table1_params
from oracles import brute_force_assignment


class TestMunkres:
    def test_identity_favoring(self):
        perm = munkres_assign(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_array_equal(perm, [0, 1])

    def test_all_equal_lexicographic(self):
        perm = munkres_assign(np.ones((4, 4)))
        np.testing.assert_array_equal(perm, [0, 1, 2, 3])

    def test_matches_brute_force_five_by_five(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            cost = rng.normal(size=(5, 5))
            perm = munkres_assign(cost)
            ref_total, ref_perm = brute_force_assignment(cost)
            assert cost[np.arange(5), perm].sum() == pytest.approx(ref_total, abs=1e-9)
            np.testing.assert_array_equal(perm, ref_perm)

    def test_matches_brute_force_various_sizes(self):
        rng = np.random.default_rng(1)
        for n in (1, 2, 3, 4, 6):
            for _ in range(10):
                cost = rng.uniform(-5, 5, size=(n, n))
                perm = munkres_assign(cost)
                ref_total, ref_perm = brute_force_assignment(cost)
                assert cost[np.arange(n), perm].sum() == pytest.approx(ref_total, abs=1e-9)
                np.testing.assert_array_equal(perm, ref_perm)

    def test_integer_tied_costs_pick_lexicographic(self):
        cost = np.array([[1.0, 1.0, 2.0],
                         [1.0, 1.0, 2.0],
                         [2.0, 2.0, 1.0]])
        perm = munkres_assign(cost)
        ref_total, ref_perm = brute_force_assignment(cost)
        np.testing.assert_array_equal(perm, ref_perm)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            munkres_assign(np.array([[np.inf, 0.0], [0.0, 1.0]]))

    def test_non_square_rejected(self):
        with pytest.raises(ValueError, match="square"):
            munkres_assign(np.zeros((2, 3)))


class TestAccuracy:
    def test_exact_match(self):
        true = np.array([0, 1, 2, 0, 1])
        assert accuracy(true, true, 3) == 1.0

    def test_swapped_labels_still_perfect(self):
        true = np.array([0, 1, 0, 1, 1, 0])
        assert accuracy(1 - true, true, 2) == 1.0
        assert error_probability(1 - true, true, 2) == 0.0

    def test_uniform_random_near_half(self):
        rng = np.random.default_rng(5)
        true = rng.integers(0, 2, size=10_000)
        pred = rng.integers(0, 2, size=10_000)
        assert accuracy(pred, true, 2) == pytest.approx(0.5, abs=0.02)

    def test_accuracy_plus_error_is_one(self):
        rng = np.random.default_rng(6)
        true = rng.integers(0, 3, size=500)
        pred = rng.integers(0, 3, size=500)
        assert accuracy(pred, true, 3) + error_probability(pred, true, 3) == 1.0

    def test_extra_predicted_labels_padded(self):
        true = np.array([0, 0, 1, 1])
        pred = np.array([0, 2, 1, 3])
        assert accuracy(pred, true, 2) == 0.5

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            accuracy([0, 1], [0, 5], 2)
        with pytest.raises(ValueError, match="length"):
            accuracy([0], [0, 1], 2)

    def test_match_labels_maps_true_to_pred(self):
        true = np.array([0, 0, 0, 1, 1, 1])
        pred = np.array([1, 1, 1, 0, 0, 0])
        np.testing.assert_array_equal(match_labels(pred, true, 2), [1, 0])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=10 ** 6))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        M = int(rng.integers(2, 4))
        true = rng.integers(0, M, size=60)
        pred = rng.integers(0, M, size=60)
        base = accuracy(pred, true, M)
        perm = rng.permutation(M)
        assert accuracy(perm[pred], true, M) == pytest.approx(base, abs=1e-12)


class TestMseMeans:
    def test_zero_for_identical(self):
        p = table1_params(0.2)
        mse, chain_perm, _ = mse_means(p, p)
        assert mse == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_array_equal(chain_perm, [0, 1, 2])

    def test_constant_offset(self):
        truth = error_scenario_params(1, 0.2)
        shifted = type(truth)(
            num_chains=2, state_counts=(2, 2), obs_dim=1,
            switch_init=truth.switch_init, switch_trans=truth.switch_trans,
            chain_init=truth.chain_init, chain_trans=truth.chain_trans,
            symbol_means=tuple(m + 0.1 for m in truth.symbol_means),
            shared_cov=truth.shared_cov)
        mse, _, _ = mse_means(shifted, truth)
        assert mse == pytest.approx(0.01, abs=1e-12)

    def test_invariant_under_consistent_relabeling(self):
        truth = error_scenario_params(2, 0.2)
        relabeled = type(truth)(
            num_chains=2, state_counts=(2, 2), obs_dim=1,
            switch_init=truth.switch_init, switch_trans=truth.switch_trans,
            chain_init=(truth.chain_init[1], truth.chain_init[0]),
            chain_trans=(truth.chain_trans[1], truth.chain_trans[0]),
            symbol_means=(truth.symbol_means[1][::-1].copy(),
                          truth.symbol_means[0][::-1].copy()),
            shared_cov=truth.shared_cov)
        mse, chain_perm, state_perms = mse_means(relabeled, truth)
        assert mse == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_array_equal(chain_perm, [1, 0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_means(table1_params(0.1), error_scenario_params(1, 0.1))


def _metric_trial(seed):
    rng = np.random.default_rng(seed)
    return {"value": float(rng.normal()), "constant": 2.5}


def _failing_trial(seed):
    raise RuntimeError("boom")


class TestMonteCarlo:
    def test_reproducible_aggregates(self):
        r1 = monte_carlo(_metric_trial, trials=20, seed=3)
        r2 = monte_carlo(_metric_trial, trials=20, seed=3)
        assert r1["metrics"] == r2["metrics"]

    def test_constant_metric_mean(self):
        out = monte_carlo(_metric_trial, trials=10, seed=1)
        assert out["metrics"]["constant"]["mean"] == pytest.approx(2.5)
        assert out["metrics"]["constant"]["std"] == pytest.approx(0.0)

    def test_std_shrinks_with_more_trials(self):
        # Std of the MEAN shrinks ~ 1/sqrt(trials): estimate it by batching.
        means_small = [monte_carlo(_metric_trial, trials=10, seed=s)
                       ["metrics"]["value"]["mean"] for s in range(30)]
        means_large = [monte_carlo(_metric_trial, trials=160, seed=s)
                       ["metrics"]["value"]["mean"] for s in range(30)]
        ratio = np.std(means_small) / np.std(means_large)
        assert ratio == pytest.approx(4.0, rel=0.5)

    def test_failures_counted_and_all_failed_raises(self):
        with pytest.raises(RuntimeError, match="failed"):
            monte_carlo(_failing_trial, trials=3, seed=0)

    def test_parallel_matches_serial(self):
        serial = monte_carlo(_metric_trial, trials=8, seed=5, jobs=1)
        parallel = monte_carlo(_metric_trial, trials=8, seed=5, jobs=2)
        assert serial["metrics"] == parallel["metrics"]
