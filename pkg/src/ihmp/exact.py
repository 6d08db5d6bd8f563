"""Exact EM for the interleaved model via its equivalent product chain.

Stacking the switching label with all component states gives an ordinary
Markov chain over M * prod(K^m) states, so the E-step is one scaled
forward-backward pass.  The state count grows exponentially with the
number of chains, which is why a cap guards this module; larger problems
belong to the variational fitters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fb import NumericalError
from .inference import (InferenceResult, decode_marginals, has_converged,
                        random_init, run_restarts, update_parameters)
from .model import ModelParams, as_observations, log_emission_table, require_valid

DEFAULT_STATE_CAP = 4096


class StateCapExceeded(ValueError):
    """Product state space too large for exact inference."""


@dataclass(frozen=True)
class ProductStateIndex:
    """Bijection between flat product states and (switch, states...) tuples."""

    num_chains: int
    state_counts: tuple

    @property
    def count(self) -> int:
        n = self.num_chains
        for k in self.state_counts:
            n *= k
        return n

    def dims(self):
        return (self.num_chains, *self.state_counts)

    def to_tuple(self, flat: int):
        return tuple(int(v) for v in np.unravel_index(flat, self.dims()))

    def to_flat(self, switch: int, states) -> int:
        return int(np.ravel_multi_index((switch, *states), self.dims()))

    def tables(self):
        """(z_of, s_of) arrays mapping each flat state to its components."""
        idx = np.indices(self.dims()).reshape(len(self.dims()), -1)
        z_of = idx[0]
        s_of = idx[1:].T  # (count, M)
        return z_of, s_of


def build_product_chain(params: ModelParams, state_cap: int = DEFAULT_STATE_CAP):
    """Initial vector and transition matrix of the equivalent flat chain.

    Transition ((z, s) -> (z', s')) multiplies the switching step, the
    newly active chain's step, and identity gating for every other chain.
    Raises :class:`StateCapExceeded` above ``state_cap`` product states.
    """
    require_valid(params)
    index = ProductStateIndex(params.num_chains, tuple(params.state_counts))
    n = index.count
    if n > state_cap:
        raise StateCapExceeded(
            f"product chain needs {n} states (cap {state_cap}); "
            "use the mean-field or structured variational fitter instead")

    z_of, s_of = index.tables()
    init = params.switch_init[z_of].copy()
    for m in range(params.num_chains):
        init *= params.chain_init[m][s_of[:, m]]

    trans = params.switch_trans[np.ix_(z_of, z_of)].copy()
    for m in range(params.num_chains):
        rows = s_of[:, m][:, None]
        cols = s_of[:, m][None, :]
        step = params.chain_trans[m][rows, cols]      # if m becomes active
        freeze = (rows == cols).astype(float)          # if m stays idle
        active_next = (z_of[None, :] == m)
        trans *= np.where(active_next, step, freeze)
    return init, trans, index


def product_log_emissions(params: ModelParams, obs, index: ProductStateIndex):
    """(T, count) table: each product state emits its active chain's symbol."""
    tables = log_emission_table(params, obs)
    z_of, s_of = index.tables()
    T = tables[0].shape[0]
    out = np.empty((T, index.count))
    for p in range(index.count):
        z = z_of[p]
        out[:, p] = tables[z][:, s_of[p, z]]
    return out


def _projections(index: ProductStateIndex):
    z_of, s_of = index.tables()
    M = index.num_chains
    p_switch = np.zeros((index.count, M))
    p_switch[np.arange(index.count), z_of] = 1.0
    p_state, p_active = [], []
    for m in range(M):
        k = index.state_counts[m]
        ps = np.zeros((index.count, k))
        ps[np.arange(index.count), s_of[:, m]] = 1.0
        p_state.append(ps)
        p_active.append(ps * (z_of == m)[:, None])
    return p_switch, p_state, p_active


def e_step(params: ModelParams, obs, state_cap: int = DEFAULT_STATE_CAP):
    """One exact E-step: log likelihood plus all moments the M-step needs.

    The pairwise posterior is reduced on the fly during the backward pass,
    so memory stays O(T * states + states^2).
    """
    seq = as_observations(obs)
    init, trans, index = build_product_chain(params, state_cap)
    le = product_log_emissions(params, seq, index)
    if not np.all(np.isfinite(le)):
        raise NumericalError("non-finite emission log density in E-step")
    T = seq.length
    n = index.count
    M = params.num_chains

    shift = le.max(axis=1)
    b = np.exp(le - shift[:, None])

    alpha = np.empty((T, n))
    scale = np.empty(T)
    cur = init * b[0]
    scale[0] = cur.sum()
    if not scale[0] > 0:
        raise NumericalError("observation impossible under current parameters (t=0)")
    alpha[0] = cur / scale[0]
    for t in range(1, T):
        cur = (alpha[t - 1] @ trans) * b[t]
        scale[t] = cur.sum()
        if not scale[t] > 0 or not np.isfinite(scale[t]):
            raise NumericalError(f"forward scale vanished at t={t}")
        alpha[t] = cur / scale[t]
    loglik = float(np.sum(np.log(scale)) + np.sum(shift))

    p_switch, p_state, p_active = _projections(index)
    gamma = np.empty((T, n))
    gamma[T - 1] = alpha[T - 1]
    switch_pairwise = np.zeros((M, M))
    gated_pairwise = [np.zeros((k, k)) for k in index.state_counts]

    # Keep the pairwise tensor in memory when it is small enough; the
    # reductions then run as single einsums instead of a per-step loop.
    batch = T * n * n <= 8_000_000
    beta_all = np.empty((T, n)) if batch else None
    beta = np.ones(n)
    if batch:
        beta_all[T - 1] = beta
        for t in range(T - 1, 0, -1):
            beta = (trans @ (b[t] * beta)) / scale[t]
            beta_all[t - 1] = beta
            row = alpha[t - 1] * beta
            gamma[t - 1] = row / row.sum()
        if T > 1:
            xi = (alpha[:-1, :, None] * trans[None, :, :]
                  * (b[1:] * beta_all[1:])[:, None, :] / scale[1:, None, None])
            switch_pairwise = np.einsum("tab,ai,bj->ij", xi, p_switch, p_switch)
            for m in range(M):
                gated_pairwise[m] = np.einsum("tab,ai,bj->ij", xi,
                                              p_state[m], p_active[m])
    else:
        for t in range(T - 1, 0, -1):
            bb = b[t] * beta
            xi = (alpha[t - 1][:, None] * trans) * bb[None, :] / scale[t]
            switch_pairwise += p_switch.T @ xi @ p_switch
            for m in range(M):
                gated_pairwise[m] += p_state[m].T @ xi @ p_active[m]
            beta = (trans @ bb) / scale[t]
            row = alpha[t - 1] * beta
            gamma[t - 1] = row / row.sum()

    if not np.all(np.isfinite(gamma)):
        raise NumericalError("non-finite posterior in E-step")

    switch_marginal = gamma @ p_switch
    state_marginal = [gamma @ p_state[m] for m in range(M)]
    occupancy = [gamma @ p_active[m] for m in range(M)]
    moments = dict(
        occupancy=occupancy,
        state_marginal=state_marginal,
        switch_marginal=switch_marginal,
        switch_pairwise=switch_pairwise,
        gated_pairwise=gated_pairwise,
        gamma=gamma,
    )
    return loglik, moments


def observed_loglik(params: ModelParams, obs,
                    state_cap: int = DEFAULT_STATE_CAP) -> float:
    """Exact observed-data log likelihood via the product chain."""
    from .fb import forward_loglik
    seq = as_observations(obs)
    init, trans, index = build_product_chain(params, state_cap)
    le = product_log_emissions(params, seq, index)
    return forward_loglik(init, trans, le)


def em_fit(obs, M: int, K, init: ModelParams | None = None, max_iter: int = 100,
           tol: float = 1e-6, seed=None, n_init: int = 1,
           state_cap: int = DEFAULT_STATE_CAP) -> InferenceResult:
    """Maximum-likelihood fit by exact EM on the product chain.

    The observed-data log likelihood is non-decreasing across iterations.
    With ``init=None`` parameters start from :func:`random_init`; when
    ``n_init > 1`` that many restarts run and the best final likelihood
    wins.  Deterministic given ``seed``.
    """
    seq = as_observations(obs)
    K = tuple(int(k) for k in K)

    def fit_once(child_seed, iters=max_iter):
        params = init if init is not None else random_init(seq, M, K, child_seed)
        require_valid(params)
        trace = []
        converged = False
        moments = None
        for it in range(iters):
            loglik, moments = e_step(params, seq, state_cap)
            trace.append(loglik)
            if has_converged(trace, tol):
                converged = True
                break
            if it < iters - 1:
                params = update_parameters(
                    params, seq,
                    occupancy=moments["occupancy"],
                    state_marginal=moments["state_marginal"],
                    switch_marginal=moments["switch_marginal"],
                    switch_pairwise=moments["switch_pairwise"],
                    gated_pairwise=moments["gated_pairwise"])
        d, states = decode_marginals(moments["switch_marginal"],
                                     moments["state_marginal"])
        return InferenceResult(
            params_hat=params,
            switch_marginals=moments["switch_marginal"],
            state_marginals=moments["state_marginal"],
            decoded_source=d,
            decoded_states=states,
            objective_trace=trace,
            iterations=len(trace),
            converged=converged,
            algorithm="em",
            seed=child_seed,
        )

    if init is not None:
        return fit_once(seed)
    from .inference import PILOT_ITERS
    return run_restarts(fit_once, seed, n_init,
                        pilot=lambda s: fit_once(s, PILOT_ITERS).objective)


# Re-exported so callers can decode any fitter's result from this module too.
from .inference import decode  # noqa: E402,F401
