"""Mean-field bound: validity, coordinate-ascent monotonicity, symmetry."""

import itertools

import numpy as np
import pytest

from ihmp.exact import observed_loglik
from ihmp.inference import VariationalState
from ihmp.meanfield import _Context, elbo_mf, mfvi_fit, sweep
from ihmp.model import ModelParams
from ihmp.simulate import error_scenario_params, sample_ihmp
from oracles import random_model


def random_state(rng, T, M, K):
    theta = [rng.dirichlet(np.ones(k), size=T) for k in K]
    phi = rng.dirichlet(np.ones(M), size=T)
    h = [np.ones((T, k)) for k in K]
    return VariationalState(theta=theta, phi=phi, h=h, g=np.ones((T, M)))


class TestBoundValidity:
    def test_degenerate_family_is_exact(self):
        p = ModelParams(1, (1,), 1, [1.0], [[1.0]], ([1.0],), ([[1.0]],),
                        ([[2.0]],), [[0.5]])
        obs = np.array([[1.7]])
        vs = VariationalState.uniform(1, 1, (1,))
        assert elbo_mf(p, obs, vs) == pytest.approx(observed_loglik(p, obs), abs=1e-12)

    def test_bound_below_exact_loglik_for_any_state(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            M = int(rng.integers(1, 3))
            K = [int(rng.integers(1, 3)) for _ in range(M)]
            T = int(rng.integers(1, 6))
            p = random_model(rng, M=M, K=K)
            obs = rng.normal(0, 1.5, size=(T, 1))
            vs = random_state(rng, T, M, K)
            assert elbo_mf(p, obs, vs) <= observed_loglik(p, obs) + 1e-9

    def test_bound_after_convergence_still_below(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            p = random_model(rng, M=2, K=[2, 2])
            obs, _ = sample_ihmp(p, 5, seed=int(rng.integers(1e6)))
            result = mfvi_fit(obs, 2, [2, 2], init=p, max_iter=60,
                              learn_params=False, tol=1e-10)
            assert result.objective <= observed_loglik(p, obs) + 1e-9

    def test_invalid_state_rejected(self):
        p = error_scenario_params(1, 0.3)
        vs = VariationalState.uniform(4, 2, (2, 2))
        vs.phi[0] = [0.7, 0.7]
        with pytest.raises(ValueError, match="simplex"):
            elbo_mf(p, np.zeros((4, 1)), vs)


class TestCoordinateAscent:
    def test_single_sweep_strictly_improves_nonstationary_state(self):
        rng = np.random.default_rng(2)
        p = random_model(rng, M=2, K=[2, 2])
        obs = rng.normal(0, 1.0, size=(6, 1))
        vs = random_state(rng, 6, 2, (2, 2))
        ctx = _Context(p, __import__("ihmp.model", fromlist=["as_observations"])
                       .as_observations(obs))
        before = elbo_mf(p, obs, vs)
        sweep(ctx, vs)
        after = elbo_mf(p, obs, vs)
        assert after > before + 1e-6

    def test_monotone_at_fixed_params(self):
        rng = np.random.default_rng(3)
        p = random_model(rng, M=2, K=[2, 2])
        obs, _ = sample_ihmp(p, 30, seed=5)
        result = mfvi_fit(obs, 2, [2, 2], init=p, max_iter=40, learn_params=False)
        trace = np.asarray(result.objective_trace)
        assert np.all(np.diff(trace) >= -1e-8 * (1 + np.abs(trace[:-1])))

    def test_monotone_with_learning(self):
        p = error_scenario_params(1, 0.3)
        obs, _ = sample_ihmp(p, 80, seed=4)
        result = mfvi_fit(obs, 2, [2, 2], seed=9, max_iter=50)
        trace = np.asarray(result.objective_trace)
        assert np.all(np.diff(trace) >= -1e-8 * (1 + np.abs(trace[:-1])))

    def test_rows_remain_simplexes(self):
        p = error_scenario_params(2, 0.2)
        obs, _ = sample_ihmp(p, 40, seed=6)
        result = mfvi_fit(obs, 2, [2, 2], seed=2, max_iter=15)
        np.testing.assert_allclose(result.switch_marginals.sum(axis=1), 1.0, atol=1e-9)
        for sm in result.state_marginals:
            np.testing.assert_allclose(sm.sum(axis=1), 1.0, atol=1e-9)

    def test_symmetry_preserved_for_symmetric_model(self):
        # Two identical chains with identical symbols; the uniform state is a
        # fixed point in the chain dimension.
        a = [[0.3, 0.7], [0.7, 0.3]]
        p = ModelParams(
            num_chains=2, state_counts=(2, 2), obs_dim=1,
            switch_init=[0.5, 0.5], switch_trans=[[0.5, 0.5], [0.5, 0.5]],
            chain_init=([0.5, 0.5], [0.5, 0.5]), chain_trans=(a, a),
            symbol_means=([[1.0], [2.0]], [[1.0], [2.0]]), shared_cov=[[0.4]])
        obs = np.array([[1.1], [1.9], [1.4], [2.2]])
        vs = VariationalState.uniform(4, 2, (2, 2))
        ctx = _Context(p, __import__("ihmp.model", fromlist=["as_observations"])
                       .as_observations(obs))
        sweep(ctx, vs)
        np.testing.assert_allclose(vs.theta[0], vs.theta[1], atol=1e-12)
        np.testing.assert_allclose(vs.phi, 0.5, atol=1e-12)


class TestFitBehavior:
    def test_deterministic_given_seed(self):
        p = error_scenario_params(1, 0.2)
        obs, _ = sample_ihmp(p, 60, seed=11)
        r1 = mfvi_fit(obs, 2, [2, 2], seed=3, max_iter=10)
        r2 = mfvi_fit(obs, 2, [2, 2], seed=3, max_iter=10)
        assert r1.objective_trace == r2.objective_trace
        np.testing.assert_array_equal(r1.decoded_source, r2.decoded_source)

    def test_linear_time_per_sweep(self):
        import time
        p = error_scenario_params(1, 0.3)
        times = {}
        for T in (1500, 3000):
            obs, _ = sample_ihmp(p, T, seed=1)
            vs = VariationalState.uniform(T, 2, (2, 2))
            ctx = _Context(p, __import__("ihmp.model", fromlist=["as_observations"])
                           .as_observations(obs))
            sweep(ctx, vs)  # warm up
            best = np.inf
            for _ in range(3):
                t0 = time.perf_counter()
                sweep(ctx, vs)
                best = min(best, time.perf_counter() - t0)
            times[T] = best
        ratio = times[3000] / times[1500]
        assert ratio < 2 * 1.5
