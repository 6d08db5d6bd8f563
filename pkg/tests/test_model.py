"""Model primitives: validation, densities, joint probability, combinatorics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ihmp.model import (LOG_ZERO, LatentTrajectory, ModelParams,
                        ObservationSequence, count_partitions_ihmp,
                        count_partitions_imp, gated_transition_logprob,
                        log_emission, log_joint, stationary_distribution,
                        validate)
from oracles import enumerate_trajectories, set_partitions


def two_chain_params(sd=1.0):
    a = [[0.1, 0.9], [0.9, 0.1]]
    return ModelParams(
        num_chains=2,
        state_counts=(2, 2),
        obs_dim=1,
        switch_init=[0.5, 0.5],
        switch_trans=a,
        chain_init=([0.5, 0.5], [0.5, 0.5]),
        chain_trans=(a, a),
        symbol_means=([[1.0], [2.0]], [[3.0], [4.0]]),
        shared_cov=[[sd ** 2]],
    )


class TestValidate:
    def test_valid_symmetric_model(self):
        assert validate(two_chain_params()) == []

    def test_bad_row_sum_reported(self):
        p = two_chain_params()
        bad = ModelParams(
            num_chains=2, state_counts=(2, 2), obs_dim=1,
            switch_init=p.switch_init, switch_trans=[[0.5, 0.6], [0.9, 0.1]],
            chain_init=p.chain_init, chain_trans=p.chain_trans,
            symbol_means=p.symbol_means, shared_cov=p.shared_cov)
        msgs = validate(bad)
        assert any("row 0 of switch_trans" in m and "1.1" in m for m in msgs)

    def test_rank_deficient_covariance(self):
        p = two_chain_params()
        bad = ModelParams(
            num_chains=2, state_counts=(2, 2), obs_dim=1,
            switch_init=p.switch_init, switch_trans=p.switch_trans,
            chain_init=p.chain_init, chain_trans=p.chain_trans,
            symbol_means=p.symbol_means, shared_cov=[[0.0]])
        assert any("positive-definite" in m for m in validate(bad))

    def test_negative_entries_reported(self):
        p = two_chain_params()
        bad = ModelParams(
            num_chains=2, state_counts=(2, 2), obs_dim=1,
            switch_init=[1.5, -0.5], switch_trans=p.switch_trans,
            chain_init=p.chain_init, chain_trans=p.chain_trans,
            symbol_means=p.symbol_means, shared_cov=p.shared_cov)
        assert any("negative" in m for m in validate(bad))


def scalar_gaussian_logpdf(x, mu, var):
    return -0.5 * math.log(2 * math.pi * var) - 0.5 * (x - mu) ** 2 / var


class TestLogEmission:
    def test_standard_normal_mode(self):
        p = ModelParams(1, (1,), 1, [1.0], [[1.0]], ([1.0],), ([[1.0]],),
                        ([[0.0]],), [[1.0]])
        assert log_emission(p, 0, 0, 0.0) == pytest.approx(-0.5 * math.log(2 * math.pi))

    def test_one_sigma_offset(self):
        p = ModelParams(1, (1,), 1, [1.0], [[1.0]], ([1.0],), ([[1.0]],),
                        ([[1.0]],), [[1.0]])
        assert log_emission(p, 0, 0, 2.0) == pytest.approx(-0.5 - 0.5 * math.log(2 * math.pi))

    def test_diagonal_bivariate_matches_scalar_product(self):
        # Independent oracle: a diagonal Gaussian factorizes into scalars.
        p = ModelParams(1, (1,), 2, [1.0], [[1.0]], ([1.0],), ([[1.0]],),
                        ([[1.0, 2.0]],), [[0.25, 0.0], [0.0, 0.25]])
        got = log_emission(p, 0, 0, [1.0, 2.0])
        oracle = (scalar_gaussian_logpdf(1.0, 1.0, 0.25)
                  + scalar_gaussian_logpdf(2.0, 2.0, 0.25))
        assert got == pytest.approx(oracle, abs=1e-12)
        assert got == pytest.approx(-math.log(2 * math.pi * 0.25), abs=1e-12)

    def test_index_errors(self):
        p = two_chain_params()
        with pytest.raises(IndexError):
            log_emission(p, 2, 0, 0.0)
        with pytest.raises(IndexError):
            log_emission(p, 0, 5, 0.0)


class TestGatedTransition:
    def test_active_uses_transition_matrix(self):
        p = two_chain_params()
        assert gated_transition_logprob(p, 0, 0, 1, True) == pytest.approx(math.log(0.9))

    def test_idle_stay_is_free(self):
        p = two_chain_params()
        assert gated_transition_logprob(p, 0, 0, 0, False) == 0.0

    def test_idle_move_is_log_zero(self):
        p = two_chain_params()
        assert gated_transition_logprob(p, 0, 0, 1, False) == LOG_ZERO

    def test_idle_zero_iff_diagonal(self):
        p = two_chain_params()
        for i in range(2):
            for j in range(2):
                val = gated_transition_logprob(p, 1, i, j, False)
                assert (val == 0.0) == (i == j)


class TestLogJoint:
    def test_single_step_single_chain(self):
        p = ModelParams(1, (1,), 1, [1.0], [[1.0]], ([1.0],), ([[1.0]],),
                        ([[5.0]],), [[1.0]])
        traj = LatentTrajectory(switch=[0], states=([0],))
        got = log_joint(p, traj, [[5.0]])
        assert got == pytest.approx(log_emission(p, 0, 0, 5.0), abs=1e-12)

    def test_compositional_sum(self):
        p = two_chain_params(sd=0.7)
        obs = np.array([[1.1], [3.2], [2.0]])
        traj = LatentTrajectory(switch=[0, 1, 0],
                                states=([0, 0, 1], [1, 0, 0]))
        expected = (math.log(0.5)                      # switch init
                    + math.log(p.switch_trans[0, 1])
                    + math.log(p.switch_trans[1, 0])
                    + math.log(0.5)                    # chain 0 init
                    + gated_transition_logprob(p, 0, 0, 0, False)
                    + gated_transition_logprob(p, 0, 0, 1, True)
                    + math.log(0.5)                    # chain 1 init
                    + gated_transition_logprob(p, 1, 1, 0, True)
                    + gated_transition_logprob(p, 1, 0, 0, False)
                    + log_emission(p, 0, 0, 1.1)
                    + log_emission(p, 1, 0, 3.2)
                    + log_emission(p, 0, 1, 2.0))
        assert log_joint(p, traj, obs) == pytest.approx(expected, abs=1e-10)

    def test_idle_freeze_violation_raises(self):
        p = two_chain_params()
        traj = LatentTrajectory(switch=[0, 0], states=([0, 1], [0, 1]))
        with pytest.raises(ValueError, match="idle-freeze"):
            log_joint(p, traj, [[1.0], [2.0]])

    def test_length_mismatch_raises(self):
        p = two_chain_params()
        traj = LatentTrajectory(switch=[0, 1], states=([0, 0], [0, 0]))
        with pytest.raises(ValueError, match="length"):
            log_joint(p, traj, [[1.0]])

    def test_normalization_over_all_trajectories(self):
        # Brute force: with the emission terms removed, the joint must sum
        # to one over every idle-freeze-respecting trajectory.
        p = two_chain_params(sd=0.5)
        obs = np.array([[1.0], [2.5], [3.5]])
        total = 0.0
        for traj in enumerate_trajectories(2, (2, 2), 3):
            lj = log_joint(p, traj, obs)
            for t in range(3):
                z = traj.switch[t]
                lj -= log_emission(p, z, int(traj.states[z][t]), obs[t])
            total += math.exp(lj)
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_chain_relabeling_equivariance(self):
        p = two_chain_params(sd=0.6)
        swapped = ModelParams(
            num_chains=2, state_counts=(2, 2), obs_dim=1,
            switch_init=p.switch_init[::-1],
            switch_trans=p.switch_trans[::-1, ::-1],
            chain_init=(p.chain_init[1], p.chain_init[0]),
            chain_trans=(p.chain_trans[1], p.chain_trans[0]),
            symbol_means=(p.symbol_means[1], p.symbol_means[0]),
            shared_cov=p.shared_cov)
        obs = np.array([[1.0], [3.3], [2.1], [4.0]])
        traj = LatentTrajectory(switch=[0, 1, 0, 1],
                                states=([0, 0, 1, 1], [1, 0, 0, 1]))
        relabeled = LatentTrajectory(switch=[1, 0, 1, 0],
                                     states=([1, 0, 0, 1], [0, 0, 1, 1]))
        assert log_joint(p, traj, obs) == pytest.approx(
            log_joint(swapped, relabeled, obs), abs=1e-10)


class TestStationary:
    def test_symmetric_chain(self):
        xi = stationary_distribution([[0.1, 0.9], [0.9, 0.1]])
        np.testing.assert_allclose(xi, [0.5, 0.5], atol=1e-12)

    def test_identity_not_ergodic(self):
        with pytest.raises(ValueError, match="ergodic"):
            stationary_distribution(np.eye(2))

    def test_hand_solved_two_state(self):
        # Solve xi A = xi for A=[[.8,.2],[.4,.6]] by hand: xi = [2/3, 1/3].
        xi = stationary_distribution([[0.8, 0.2], [0.4, 0.6]])
        np.testing.assert_allclose(xi, [2 / 3, 1 / 3], atol=1e-12)

    def test_fixed_point_property(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            a = rng.dirichlet(np.ones(3), size=3)
            xi = stationary_distribution(a)
            np.testing.assert_allclose(xi @ a, xi, atol=1e-10)
            assert xi.sum() == pytest.approx(1.0)


class TestPartitionCounts:
    def test_reported_values_at_ten(self):
        assert count_partitions_ihmp(10) == 42
        assert count_partitions_imp(10) == 115975

    def test_single_symbol(self):
        assert count_partitions_ihmp(1) == 1
        assert count_partitions_imp(1) == 1

    def test_four_symbols_vs_enumeration(self):
        parts = list(set_partitions(range(4)))
        assert count_partitions_imp(4) == len(parts) == 15
        shapes = {tuple(sorted(len(b) for b in part)) for part in parts}
        assert count_partitions_ihmp(4) == len(shapes) == 5

    @pytest.mark.parametrize("n", range(1, 9))
    def test_small_counts_vs_enumeration(self, n):
        parts = list(set_partitions(range(n)))
        assert count_partitions_imp(n) == len(parts)
        shapes = {tuple(sorted(len(b) for b in part)) for part in parts}
        assert count_partitions_ihmp(n) == len(shapes)

    def test_ihmp_never_exceeds_imp(self):
        for n in range(1, 21):
            ip, mp = count_partitions_ihmp(n), count_partitions_imp(n)
            assert ip <= mp
            assert (ip == mp) == (n <= 2)

    def test_range_guard(self):
        with pytest.raises(OverflowError):
            count_partitions_imp(100000)
        with pytest.raises(ValueError):
            count_partitions_ihmp(0)


class TestObservationSequence:
    def test_coerces_one_dimensional(self):
        seq = ObservationSequence([1.0, 2.0, 3.0])
        assert seq.values.shape == (3, 1)
        assert seq.length == 3 and seq.dim == 1

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ObservationSequence(np.zeros((0, 1)))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10 ** 6))
def test_trajectory_idle_freeze_detector(seed):
    rng = np.random.default_rng(seed)
    T = 5
    switch = rng.integers(0, 2, size=T)
    states = []
    for m in range(2):
        s = [int(rng.integers(0, 2))]
        for t in range(1, T):
            s.append(int(rng.integers(0, 2)) if switch[t] == m else s[-1])
        states.append(np.array(s))
    traj = LatentTrajectory(switch=switch, states=tuple(states))
    assert traj.check_idle_freeze() == []
