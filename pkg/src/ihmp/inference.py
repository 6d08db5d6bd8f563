"""Shared machinery for the three de-interleaving fitters.

Houses the result container, the variational-state container, random
parameter initialization, and the maximization step.  The M-step is
identical for exact EM and both variational schemes once the posterior
moments are expressed in a common form:

* ``occupancy[m][t, k]``  -- E[chain m active at t AND in state k]
* ``state_marginal[m][t, k]`` -- E[chain m in state k at t]
* ``switch_marginal[t, m]``   -- E[chain m active at t]
* ``switch_pairwise[j, i]``   -- sum over t of E[active j at t-1, i at t]
* ``gated_pairwise[m][j, i]`` -- sum over t of E[m active at t, moved j->i]

Because the switching variable is categorical, cross-chain emission
moments vanish and the normal equations for the symbol means reduce to
a (possibly rank-deficient) diagonal system solved by pseudo-inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, as_observations

# Estimated probabilities are floored here before renormalization so no
# transition becomes permanently absorbing.
PROB_FLOOR = 1e-12
# Expected counts below this leave the corresponding estimate untouched.
COUNT_FLOOR = 1e-12
# Smallest eigenvalue allowed in the estimated shared covariance.
COV_EIG_FLOOR = 1e-8
# Singular values below this fraction of the largest are treated as zero
# in the pseudo-inverse of the mean normal equations.
PINV_RCOND = 1e-10


@dataclass
class InferenceResult:
    """Output of one de-interleaving fit."""

    params_hat: ModelParams
    switch_marginals: np.ndarray          # (T, M)
    state_marginals: list                 # per chain (T, K^m)
    decoded_source: np.ndarray            # (T,) argmax switch labels
    decoded_states: list                  # per chain (T,) argmax states
    objective_trace: list
    iterations: int
    converged: bool
    algorithm: str = ""
    seed: int | None = None

    @property
    def objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else float("-inf")


@dataclass
class VariationalState:
    """Variational marginals and emission surrogates.

    ``theta[m]`` and ``phi`` are per-step simplex rows for the component
    and switching chains.  ``h[m]`` and ``g`` are the strictly positive
    emission surrogates used by the structured approximation; mean-field
    updates leave them at 1.
    """

    theta: list
    phi: np.ndarray
    h: list
    g: np.ndarray

    @classmethod
    def uniform(cls, T: int, M: int, K) -> "VariationalState":
        theta = [np.full((T, k), 1.0 / k) for k in K]
        phi = np.full((T, M), 1.0 / M)
        h = [np.ones((T, k)) for k in K]
        g = np.ones((T, M))
        return cls(theta=theta, phi=phi, h=h, g=g)

    def check(self, tol: float = 1e-9) -> list:
        problems = []
        if np.any(self.phi < 0) or np.max(np.abs(self.phi.sum(axis=1) - 1)) > tol:
            problems.append("phi rows are not simplexes")
        for m, th in enumerate(self.theta):
            if np.any(th < 0) or np.max(np.abs(th.sum(axis=1) - 1)) > tol:
                problems.append(f"theta[{m}] rows are not simplexes")
        if np.any(self.g <= 0):
            problems.append("g has non-positive entries")
        for m, hm in enumerate(self.h):
            if np.any(hm <= 0):
                problems.append(f"h[{m}] has non-positive entries")
        return problems


def decode_marginals(switch_marginals, state_marginals):
    """Argmax decoding; ties break toward the smallest index."""
    d = np.argmax(switch_marginals, axis=1)
    states = [np.argmax(sm, axis=1) for sm in state_marginals]
    return d, states


def decode(result: InferenceResult):
    """Decoded source labels and per-chain state labels of a result."""
    return decode_marginals(result.switch_marginals, result.state_marginals)


def random_init(obs, M: int, K, seed=None, cov_scale: float = 1.0) -> ModelParams:
    """Random starting parameters.

    Means are drawn uniformly over the observed value range, transition
    rows are Dirichlet perturbations of uniform rows, and the shared
    covariance starts at the sample covariance of the observations.
    """
    seq = as_observations(obs)
    x = seq.values
    rng = np.random.default_rng(seed)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = np.maximum(hi - lo, 1e-3)

    def dirichlet_rows(n, k):
        return rng.dirichlet(np.full(k, 5.0), size=n)

    means = tuple(rng.uniform(lo, lo + span, size=(k, seq.dim)) for k in K)
    if x.shape[0] > 1:
        cov = np.atleast_2d(np.cov(x.T))
    else:
        cov = np.eye(seq.dim)
    cov = cov_scale * cov + COV_EIG_FLOOR * np.eye(seq.dim)
    return ModelParams(
        num_chains=M,
        state_counts=tuple(K),
        obs_dim=seq.dim,
        switch_init=rng.dirichlet(np.full(M, 5.0)),
        switch_trans=dirichlet_rows(M, M),
        chain_init=tuple(rng.dirichlet(np.full(k, 5.0)) for k in K),
        chain_trans=tuple(dirichlet_rows(k, k) for k in K),
        symbol_means=means,
        shared_cov=cov,
    )


def _floor_rows(counts, previous):
    """Transition rows from expected counts; empty rows keep their old value."""
    counts = np.asarray(counts, dtype=float)
    out = np.array(previous, dtype=float, copy=True)
    for j in range(counts.shape[0]):
        s = counts[j].sum()
        if s < COUNT_FLOOR:
            continue
        row = np.maximum(counts[j] / s, PROB_FLOOR)
        out[j] = row / row.sum()
    return out


def _floor_vector(counts, previous):
    counts = np.asarray(counts, dtype=float)
    s = counts.sum()
    if s < COUNT_FLOOR:
        return np.array(previous, dtype=float, copy=True)
    v = np.maximum(counts / s, PROB_FLOOR)
    return v / v.sum()


def update_parameters(params: ModelParams, obs, occupancy, state_marginal,
                      switch_marginal, switch_pairwise, gated_pairwise) -> ModelParams:
    """One maximization step from posterior moments.

    Symbol means solve the stacked normal equations with a pseudo-inverse;
    states whose expected occupancy underflows keep their previous mean.
    The shared covariance is refit around the new means and floored to
    stay positive-definite.
    """
    seq = as_observations(obs)
    x = seq.values
    T, D = x.shape
    M = params.num_chains
    K = params.state_counts
    total = sum(K)

    w = np.concatenate([occupancy[m] for m in range(M)], axis=1)  # (T, total)
    counts = w.sum(axis=0)                                        # (total,)
    normal = np.diag(counts)
    rhs = w.T @ x                                                 # (total, D)
    stacked = np.linalg.pinv(normal, rcond=PINV_RCOND) @ rhs

    old = np.concatenate([params.symbol_means[m] for m in range(M)], axis=0)
    keep = counts < COUNT_FLOOR
    stacked[keep] = old[keep]

    means = []
    offset = 0
    for m in range(M):
        means.append(stacked[offset:offset + K[m]])
        offset += K[m]

    # Shared covariance around the refreshed means.
    cov = np.zeros((D, D))
    for m in range(M):
        diff = x[:, None, :] - means[m][None, :, :]          # (T, K, D)
        cov += np.einsum("tk,tkd,tke->de", occupancy[m], diff, diff)
    cov /= T
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, COV_EIG_FLOOR)
    cov = (vecs * vals) @ vecs.T

    return ModelParams(
        num_chains=M,
        state_counts=K,
        obs_dim=D,
        switch_init=_floor_vector(switch_marginal[0], params.switch_init),
        switch_trans=_floor_rows(switch_pairwise, params.switch_trans),
        chain_init=tuple(_floor_vector(state_marginal[m][0], params.chain_init[m])
                         for m in range(M)),
        chain_trans=tuple(_floor_rows(gated_pairwise[m], params.chain_trans[m])
                          for m in range(M)),
        symbol_means=tuple(means),
        shared_cov=cov,
    )


def has_converged(trace, tol: float) -> bool:
    if len(trace) < 2:
        return False
    prev, cur = trace[-2], trace[-1]
    return abs(cur - prev) < tol * (1.0 + abs(prev))


PILOT_ITERS = 15


def run_restarts(fit_once, seed, n_init: int, pilot=None):
    """Run ``fit_once`` for ``n_init`` spawned seeds, keep the best objective.

    When ``pilot(child_seed) -> objective`` is supplied, every restart is
    first screened by a short pilot run and only the most promising seed
    gets the full fit; bad initializations separate early, so this costs
    far less than ``n_init`` full fits.
    """
    if n_init <= 1:
        return fit_once(seed)
    child_seeds = [int(ss.generate_state(1)[0])
                   for ss in np.random.SeedSequence(seed).spawn(n_init)]
    if pilot is not None:
        scores = [pilot(child) for child in child_seeds]
        return fit_once(child_seeds[int(np.argmax(scores))])
    best = None
    for child in child_seeds:
        result = fit_once(child)
        if best is None or result.objective > best.objective:
            best = result
    return best
