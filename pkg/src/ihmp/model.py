"""Interleaved hidden Markov process (IHMP) model: parameter container,
probability primitives, and alphabet-partition combinatorics.

An IHMP consists of M component Markov chains with Gaussian symbol
emissions plus a switching chain that selects which component is active
at each step.  Inactive chains freeze in their previous state.  All
probability arithmetic is carried in log space; exact zeros are
represented by the floored-log sentinel ``log(LOG_FLOOR)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Probabilities are floored at this value before taking logs, so that
# exact zeros (e.g. identity gating off-diagonals) stay finite.
LOG_FLOOR = 1e-300
LOG_ZERO = float(np.log(LOG_FLOOR))

# Absolute tolerance for simplex / row-stochasticity checks.
STOCHASTIC_TOL = 1e-9

# Maximum alphabet size accepted by the partition-count routines.  The
# counts are exact big integers; the cap only guards runtime.
MAX_PARTITION_N = 1000


def flog(x):
    """Elementwise log with probabilities floored at ``LOG_FLOOR``."""
    return np.log(np.maximum(x, LOG_FLOOR))


def _as_prob_vector(v, name):
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


def _as_trans_matrix(a, name):
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ModelParams:
    """Full IHMP parameter set.

    Attributes
    ----------
    num_chains : number of component chains M (>= 1).
    state_counts : hidden-state count K^m of each component chain.
    obs_dim : dimension D of each observation vector.
    switch_init : initial distribution of the switching chain, shape (M,).
    switch_trans : row-stochastic switching transition matrix, shape (M, M).
    chain_init : per-chain initial distributions, shapes (K^m,).
    chain_trans : per-chain row-stochastic transition matrices (K^m, K^m).
    symbol_means : per-chain symbol means, shapes (K^m, D).
    shared_cov : emission covariance shared by every symbol, shape (D, D).
    """

    num_chains: int
    state_counts: tuple
    obs_dim: int
    switch_init: np.ndarray
    switch_trans: np.ndarray
    chain_init: tuple
    chain_trans: tuple
    symbol_means: tuple
    shared_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "num_chains", int(self.num_chains))
        object.__setattr__(self, "state_counts",
                           tuple(int(k) for k in self.state_counts))
        object.__setattr__(self, "obs_dim", int(self.obs_dim))
        object.__setattr__(self, "switch_init",
                           _as_prob_vector(self.switch_init, "switch_init"))
        object.__setattr__(self, "switch_trans",
                           _as_trans_matrix(self.switch_trans, "switch_trans"))
        object.__setattr__(self, "chain_init", tuple(
            _as_prob_vector(v, f"chain_init[{m}]")
            for m, v in enumerate(self.chain_init)))
        object.__setattr__(self, "chain_trans", tuple(
            _as_trans_matrix(a, f"chain_trans[{m}]")
            for m, a in enumerate(self.chain_trans)))
        means = []
        for m, mu in enumerate(self.symbol_means):
            arr = np.asarray(mu, dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            means.append(arr)
        object.__setattr__(self, "symbol_means", tuple(means))
        cov = np.asarray(self.shared_cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        object.__setattr__(self, "shared_cov", cov)
        for arr in (self.switch_init, self.switch_trans, self.shared_cov,
                    *self.chain_init, *self.chain_trans, *self.symbol_means):
            arr.setflags(write=False)

    @property
    def total_states(self) -> int:
        """Total symbol count across all chains."""
        return int(sum(self.state_counts))


@dataclass(frozen=True)
class ObservationSequence:
    """A length-T stream of D-dimensional observations."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError("observations must form a (T, D) array with T >= 1")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LatentTrajectory:
    """Switching labels and per-chain states of one generated sequence.

    ``switch[t]`` is the active chain index (0-based) at step t and
    ``states[m][t]`` the state of chain m.  Inactive chains must hold
    their previous state (idle-freeze).
    """

    switch: np.ndarray
    states: tuple

    def __post_init__(self):
        sw = np.asarray(self.switch, dtype=int)
        sts = tuple(np.asarray(s, dtype=int) for s in self.states)
        sw.setflags(write=False)
        for s in sts:
            s.setflags(write=False)
        object.__setattr__(self, "switch", sw)
        object.__setattr__(self, "states", sts)

    def __len__(self):
        return self.switch.shape[0]

    def check_idle_freeze(self) -> list:
        """Return violation messages for any idle chain that changed state."""
        problems = []
        T = len(self)
        for m, seq in enumerate(self.states):
            if seq.shape[0] != T:
                problems.append(
                    f"state sequence of chain {m} has length {seq.shape[0]}, expected {T}")
                continue
            for t in range(1, T):
                if self.switch[t] != m and seq[t] != seq[t - 1]:
                    problems.append(
                        f"chain {m} changed state at t={t} while idle")
        return problems


def as_observations(obs) -> ObservationSequence:
    """Coerce a (T,), (T, D) array or ObservationSequence to the wrapper type."""
    if isinstance(obs, ObservationSequence):
        return obs
    return ObservationSequence(np.asarray(obs, dtype=float))


def validate(params: ModelParams) -> list:
    """Check every model invariant; returns the complete list of violations.

    An empty list means the parameters are valid.  The input is never
    mutated; violations are returned as human-readable strings.
    """
    v = []
    M = params.num_chains
    if M < 1:
        v.append(f"num_chains must be >= 1, got {M}")
    if params.obs_dim < 1:
        v.append(f"obs_dim must be >= 1, got {params.obs_dim}")
    if len(params.state_counts) != M:
        v.append(f"state_counts has length {len(params.state_counts)}, expected {M}")
    for m, k in enumerate(params.state_counts):
        if k < 1:
            v.append(f"state count of chain {m} must be >= 1, got {k}")

    def check_simplex(vec, name):
        if np.any(vec < 0):
            v.append(f"{name} has negative entries")
        s = float(vec.sum())
        if abs(s - 1.0) > STOCHASTIC_TOL:
            v.append(f"{name} sums to {s:.12g}")

    def check_rows(mat, name):
        if np.any(mat < 0):
            v.append(f"{name} has negative entries")
        sums = mat.sum(axis=1)
        for j, s in enumerate(sums):
            if abs(s - 1.0) > STOCHASTIC_TOL:
                v.append(f"row {j} of {name} sums to {s:.12g}")

    if params.switch_init.shape != (M,):
        v.append(f"switch_init has shape {params.switch_init.shape}, expected ({M},)")
    else:
        check_simplex(params.switch_init, "switch_init")
    if params.switch_trans.shape != (M, M):
        v.append(f"switch_trans has shape {params.switch_trans.shape}, expected ({M}, {M})")
    else:
        check_rows(params.switch_trans, "switch_trans")

    if len(params.chain_init) != M or len(params.chain_trans) != M:
        v.append("chain_init/chain_trans must have one entry per chain")
    else:
        for m, k in enumerate(params.state_counts):
            if params.chain_init[m].shape != (k,):
                v.append(f"chain_init[{m}] has shape {params.chain_init[m].shape}, expected ({k},)")
            else:
                check_simplex(params.chain_init[m], f"chain_init[{m}]")
            if params.chain_trans[m].shape != (k, k):
                v.append(f"chain_trans[{m}] has shape {params.chain_trans[m].shape}, expected ({k}, {k})")
            else:
                check_rows(params.chain_trans[m], f"chain_trans[{m}]")

    if len(params.symbol_means) != M:
        v.append("symbol_means must have one block per chain")
    else:
        for m, k in enumerate(params.state_counts):
            mu = params.symbol_means[m]
            if mu.shape != (k, params.obs_dim):
                v.append(f"symbol_means[{m}] has shape {mu.shape}, expected ({k}, {params.obs_dim})")

    cov = params.shared_cov
    if cov.shape != (params.obs_dim, params.obs_dim):
        v.append(f"shared_cov has shape {cov.shape}, expected square of size {params.obs_dim}")
    else:
        if np.max(np.abs(cov - cov.T)) > STOCHASTIC_TOL:
            v.append("shared_cov is not symmetric")
        else:
            eigvals = np.linalg.eigvalsh(cov)
            if np.min(eigvals) <= 0:
                v.append("shared_cov not positive-definite")
    return v


def require_valid(params: ModelParams):
    problems = validate(params)
    if problems:
        raise ValueError("invalid model parameters: " + "; ".join(problems))


def renormalized(params: ModelParams) -> ModelParams:
    """Return a copy with every distribution renormalized to sum exactly to 1.

    Intended for parameters loaded from text configs that carry rounded
    decimals within the stochasticity tolerance.
    """
    def norm_vec(v):
        return np.asarray(v, dtype=float) / np.sum(v)

    def norm_rows(a):
        a = np.asarray(a, dtype=float)
        return a / a.sum(axis=1, keepdims=True)

    return ModelParams(
        num_chains=params.num_chains,
        state_counts=params.state_counts,
        obs_dim=params.obs_dim,
        switch_init=norm_vec(params.switch_init),
        switch_trans=norm_rows(params.switch_trans),
        chain_init=tuple(norm_vec(v) for v in params.chain_init),
        chain_trans=tuple(norm_rows(a) for a in params.chain_trans),
        symbol_means=params.symbol_means,
        shared_cov=0.5 * (params.shared_cov + params.shared_cov.T),
    )


def _cov_factors(cov):
    """Cholesky factor and log-normalizer of a Gaussian with covariance ``cov``."""
    chol = np.linalg.cholesky(cov)
    half_logdet = float(np.sum(np.log(np.diag(chol))))
    d = cov.shape[0]
    log_norm = -0.5 * d * np.log(2.0 * np.pi) - half_logdet
    return chol, log_norm


def log_emission(params: ModelParams, chain: int, state: int, obs) -> float:
    """Log density of one observation under symbol ``state`` of ``chain``.

    Includes the full Gaussian normalization term.
    """
    M = params.num_chains
    if not 0 <= chain < M:
        raise IndexError(f"chain index {chain} out of range [0, {M})")
    if not 0 <= state < params.state_counts[chain]:
        raise IndexError(f"state index {state} out of range for chain {chain}")
    x = np.atleast_1d(np.asarray(obs, dtype=float))
    mu = params.symbol_means[chain][state]
    chol, log_norm = _cov_factors(params.shared_cov)
    resid = np.linalg.solve(chol, x - mu)
    return float(log_norm - 0.5 * np.dot(resid, resid))


def log_emission_table(params: ModelParams, obs) -> list:
    """Per-chain (T, K^m) tables of symbol log densities for a whole sequence."""
    seq = as_observations(obs)
    x = seq.values
    chol, log_norm = _cov_factors(params.shared_cov)
    tables = []
    for m in range(params.num_chains):
        mu = params.symbol_means[m]            # (K, D)
        diff = x[:, None, :] - mu[None, :, :]  # (T, K, D)
        sol = np.linalg.solve(chol, diff.reshape(-1, x.shape[1]).T).T
        quad = np.sum(sol * sol, axis=1).reshape(diff.shape[:2])
        tables.append(log_norm - 0.5 * quad)
    return tables


def gated_transition_logprob(params: ModelParams, chain: int, from_state: int,
                             to_state: int, active: bool) -> float:
    """Log transition probability of one component chain for one step.

    Active chains move by their transition matrix; idle chains freeze,
    i.e. the log probability is 0 for staying and ``LOG_ZERO`` for moving.
    """
    k = params.state_counts[chain]
    if not 0 <= chain < params.num_chains:
        raise IndexError(f"chain index {chain} out of range")
    if not (0 <= from_state < k and 0 <= to_state < k):
        raise IndexError(f"state index out of range for chain {chain}")
    if active:
        return float(flog(params.chain_trans[chain][from_state, to_state]))
    return 0.0 if from_state == to_state else LOG_ZERO


def log_joint(params: ModelParams, traj: LatentTrajectory, obs) -> float:
    """Complete-data log probability log P(Z, S, p) of one trajectory.

    Only the active chain's emission contributes at each step.  Raises
    on idle-freeze violations or length mismatches.
    """
    seq = as_observations(obs)
    T = seq.length
    if len(traj) != T:
        raise ValueError(f"trajectory length {len(traj)} != observation length {T}")
    problems = traj.check_idle_freeze()
    if problems:
        raise ValueError("idle-freeze violated: " + "; ".join(problems))

    total = float(flog(params.switch_init[traj.switch[0]]))
    for t in range(1, T):
        total += float(flog(params.switch_trans[traj.switch[t - 1], traj.switch[t]]))
    for m in range(params.num_chains):
        seq_m = traj.states[m]
        total += float(flog(params.chain_init[m][seq_m[0]]))
        for t in range(1, T):
            total += gated_transition_logprob(
                params, m, int(seq_m[t - 1]), int(seq_m[t]),
                active=bool(traj.switch[t] == m))
    for t in range(T):
        z = int(traj.switch[t])
        total += log_emission(params, z, int(traj.states[z][t]), seq.values[t])
    return total


def stationary_distribution(trans) -> np.ndarray:
    """Unique stationary distribution of a row-stochastic matrix.

    Solves the null-space linear system with the sum-to-one constraint.
    Raises ``ValueError`` when the stationary vector is not unique
    (reducible chain, e.g. the identity matrix).
    """
    a = np.asarray(trans, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("transition matrix must be square")
    n = a.shape[0]
    if np.max(np.abs(a.sum(axis=1) - 1.0)) > 1e-6:
        raise ValueError("matrix rows must sum to 1")

    m = a.T - np.eye(n)
    # Multiplicity of the unit eigenvalue decides uniqueness.
    svals = np.linalg.svd(m, compute_uv=False)
    null_dim = int(np.sum(svals < 1e-9 * max(1.0, svals[0])))
    if null_dim != 1:
        raise ValueError("no unique stationary distribution (chain not ergodic)")

    sys = np.vstack([m, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    xi, *_ = np.linalg.lstsq(sys, rhs, rcond=None)
    if np.min(xi) < -1e-9:
        raise ValueError("stationary solve produced negative entries")
    xi = np.maximum(xi, 0.0)
    return xi / xi.sum()


def count_partitions_ihmp(n: int) -> int:
    """Number of sub-alphabet layouts when blocks are unlabeled: partition count p(n)."""
    if n < 1:
        raise ValueError("alphabet size must be >= 1")
    if n > MAX_PARTITION_N:
        raise OverflowError(f"partition count beyond supported range (n > {MAX_PARTITION_N})")
    # parts[k] = number of partitions of the running n with largest part <= k.
    table = [1] + [0] * n
    for part in range(1, n + 1):
        for total in range(part, n + 1):
            table[total] += table[total - part]
    return table[n]


def count_partitions_imp(n: int) -> int:
    """Number of labeled-block alphabet partitions: Bell number B(n)."""
    if n < 1:
        raise ValueError("alphabet size must be >= 1")
    if n > MAX_PARTITION_N:
        raise OverflowError(f"partition count beyond supported range (n > {MAX_PARTITION_N})")
    # Bell triangle: the last entry of the (n-1)-th row is B(n).
    row = [1]
    for _ in range(n - 1):
        nxt = [row[-1]]
        for x in row:
            nxt.append(nxt[-1] + x)
        row = nxt
    return row[-1]
