"""Structured variational inference for the interleaved model.

The variational family keeps M+1 independent Markov chains: each
component chain and the switching chain retain their own dynamics, and
every time step gets a free positive "surrogate emission" (h for the
component chains, g for the switching chain).  Smoothing marginals of
each surrogate chain come from an ordinary scaled forward-backward pass,
which is what makes this family tractable.

The surrogate update is a fixed-point step derived from the bound's
stationarity condition.  Because idle-freeze gating couples the chains
beyond what node potentials can represent, the raw step is not
guaranteed to increase the bound, so every block update is accepted
through a backtracking damping guard: the bound trace is non-decreasing
by construction.  The variational chains carry their own snapshot of
the initial/transition parameters; parameter learning moves the model
first and the next sweep re-synchronizes the snapshot under the same
guard.
"""

from __future__ import annotations

import numpy as np

from .fb import NumericalError, forward_backward
from .inference import (InferenceResult, VariationalState, decode_marginals,
                        has_converged, random_init, run_restarts,
                        update_parameters)
from .model import (ModelParams, as_observations, flog, log_emission_table,
                    require_valid)

_ACCEPT_SLACK = 1e-12
_MIN_DAMP = 1e-3


class _Block:
    """One variational chain: its parameter snapshot, surrogates, and cache."""

    def __init__(self, pi, trans, log_surrogate):
        self.pi = np.asarray(pi, dtype=float)
        self.trans = np.asarray(trans, dtype=float)
        self.log_surrogate = np.asarray(log_surrogate, dtype=float)
        self.loglik = None
        self.gamma = None
        self.xi = None

    def refresh(self):
        self.loglik, self.gamma, self.xi = forward_backward(
            self.pi, self.trans, self.log_surrogate, want_pairwise=True)

    def snapshot(self):
        return (self.pi.copy(), self.trans.copy(), self.log_surrogate.copy(),
                self.loglik, None if self.gamma is None else self.gamma.copy(),
                None if self.xi is None else self.xi.copy())

    def restore(self, snap):
        self.pi, self.trans, self.log_surrogate, self.loglik, self.gamma, self.xi = snap


def _normalize_rows(log_table):
    """Shift each row to max 0 so the surrogates have numerical headroom."""
    return log_table - log_table.max(axis=1, keepdims=True)


class _State:
    """All M+1 variational chains plus cached emission tables."""

    def __init__(self, params: ModelParams, obs, initial: VariationalState | None = None):
        self.params = params
        self.obs = obs
        self.ll = log_emission_table(params, obs)
        T = self.ll[0].shape[0]
        M = params.num_chains
        self.chains = []
        for m in range(M):
            if initial is None:
                log_h = np.zeros((T, params.state_counts[m]))
            else:
                log_h = _normalize_rows(flog(initial.h[m]))
            self.chains.append(_Block(params.chain_init[m], params.chain_trans[m], log_h))
        log_g = np.zeros((T, M)) if initial is None else _normalize_rows(flog(initial.g))
        self.switch = _Block(params.switch_init, params.switch_trans, log_g)
        for block in self.blocks():
            block.refresh()

    def blocks(self):
        return [*self.chains, self.switch]

    def set_params(self, params: ModelParams):
        self.params = params
        self.ll = log_emission_table(params, self.obs)

    def theta(self, m):
        return self.chains[m].gamma

    @property
    def phi(self):
        return self.switch.gamma

    def elbo(self) -> float:
        """Bound value for the current chains and model parameters.

        All cross terms use the exact pairwise smoothing marginals, so
        the value is a true lower bound on the observed log likelihood.
        """
        params = self.params
        M = params.num_chains
        phi = self.phi
        total = self.switch.loglik + sum(c.loglik for c in self.chains)
        total += float(phi[0] @ (flog(params.switch_init) - flog(self.switch.pi)))
        if self.switch.xi is not None:
            total += float(np.einsum(
                "tij,ij->", self.switch.xi,
                flog(params.switch_trans) - flog(self.switch.trans)))
        total -= float(np.sum(phi * self.switch.log_surrogate))
        for m in range(M):
            block = self.chains[m]
            th = block.gamma
            total += float(np.sum(phi[:, m] * np.einsum("tk,tk->t", th, self.ll[m])))
            total += float(th[0] @ (flog(params.chain_init[m]) - flog(block.pi)))
            if block.xi is not None:
                log_a = flog(params.chain_trans[m])
                log_e = flog(np.eye(params.state_counts[m]))
                gate = phi[1:, m]
                ebar = (gate[:, None, None] * log_a[None, :, :]
                        + (1.0 - gate)[:, None, None] * log_e[None, :, :])
                total += float(np.einsum(
                    "tij,tij->", block.xi, ebar - flog(block.trans)[None, :, :]))
            total -= float(np.sum(th * block.log_surrogate))
        return total


def _candidate_log_h(state: _State, m: int, gate_scale: float | None = None):
    """Fixed-point surrogate for chain m from the current marginals.

    ``gate_scale`` tempers the idle-freeze log penalty in the proposal
    (the bound itself always uses the exact floored penalty); tempered
    proposals serve as guarded rescue steps when the exact fixed point
    stalls in a frozen configuration.
    """
    params = state.params
    phi = state.phi
    th = state.theta(m)
    k = params.state_counts[m]
    log_a = flog(params.chain_trans[m])
    if gate_scale is None:
        log_e = flog(np.eye(k))
    else:
        log_e = -gate_scale * (1.0 - np.eye(k))
    diff = log_e - log_a
    T = th.shape[0]
    out = phi[:, m:m + 1] * state.ll[m]
    if T > 1:
        out[1:] += (1.0 - phi[1:, m])[:, None] * (th[:-1] @ diff)
        out[:-1] += (1.0 - phi[1:, m])[:, None] * (th[1:] @ diff.T)
    return _normalize_rows(out)


def _candidate_log_g(state: _State):
    """Fixed-point switching surrogate from the current chain marginals."""
    params = state.params
    M = params.num_chains
    T = state.phi.shape[0]
    out = np.empty((T, M))
    for m in range(M):
        th = state.theta(m)
        out[:, m] = np.einsum("tk,tk->t", th, state.ll[m])
        if T > 1:
            log_a = flog(params.chain_trans[m])
            log_e = flog(np.eye(params.state_counts[m]))
            out[1:, m] -= np.einsum("ti,ij,tj->t", th[:-1], log_e - log_a, th[1:])
    return _normalize_rows(out)


def _guarded_update(state: _State, block: _Block, pi_new, trans_new, log_new,
                    current_elbo: float):
    """Apply a block update, damping it back until the bound does not drop.

    Returns ``(elbo, made_progress)``; a fully rejected update restores
    the block, so the bound trace can never decrease.
    """
    snap = block.snapshot()
    log_old = snap[2]
    lam = 1.0
    while lam >= _MIN_DAMP:
        block.pi = np.asarray(pi_new, dtype=float)
        block.trans = np.asarray(trans_new, dtype=float)
        block.log_surrogate = log_old + lam * (log_new - log_old)
        try:
            block.refresh()
            value = state.elbo()
        except NumericalError:
            value = -np.inf
        if value >= current_elbo - _ACCEPT_SLACK * (1.0 + abs(current_elbo)):
            progress = value > current_elbo + 1e-9 * (1.0 + abs(current_elbo))
            return value, progress
        lam *= 0.5
    block.restore(snap)
    return current_elbo, False


def _polish(state: _State, current: float, max_rounds: int = 150) -> float:
    """Quasi-Newton refinement of the bound over all log surrogates.

    The fixed-point iteration can stall in frozen configurations on
    short, weakly informative sequences; direct ascent escapes them.
    Only worthwhile (and only affordable) for small problems, so callers
    gate it by problem size.  The refined state is kept only when it
    improves the bound.
    """
    from scipy.optimize import minimize

    chains = state.chains
    M = len(chains)
    T = state.phi.shape[0]
    sizes = [c.log_surrogate.size for c in chains] + [state.switch.log_surrogate.size]
    snaps = [b.snapshot() for b in state.blocks()]

    def unpack(x):
        off = 0
        for m in range(M):
            chains[m].log_surrogate = x[off:off + sizes[m]].reshape(T, -1)
            off += sizes[m]
        state.switch.log_surrogate = x[off:].reshape(T, M)

    def neg(x):
        unpack(x)
        try:
            for b in state.blocks():
                b.refresh()
            val = state.elbo()
        except NumericalError:
            return 1e12
        return -val if np.isfinite(val) else 1e12

    x0 = np.concatenate([b.log_surrogate.ravel() for b in state.blocks()])
    best_x, best_val = x0, current
    for start in (x0, np.zeros_like(x0)):
        res = minimize(neg, start, method="L-BFGS-B",
                       options=dict(maxiter=max_rounds, ftol=1e-13, gtol=1e-9))
        if np.isfinite(res.fun) and -res.fun > best_val:
            best_val, best_x = -res.fun, res.x
    unpack(best_x)
    for b in state.blocks():
        b.refresh()
    value = state.elbo()
    if value >= current:
        return value
    for b, snap in zip(state.blocks(), snaps):
        b.restore(snap)
    return current


def elbo_structured(params: ModelParams, obs, vs: VariationalState) -> float:
    """Bound value for given surrogates, marginalized by forward-backward.

    The chains use the model's own initial and transition parameters.
    Raises on non-positive surrogates.
    """
    if any(np.any(hm <= 0) for hm in vs.h) or np.any(vs.g <= 0):
        raise ValueError("emission surrogates must be strictly positive")
    state = _State(params, as_observations(obs), initial=vs)
    return state.elbo()


def conditional_chain_marginals(params: ModelParams, obs, labels, chain: int):
    """Exact smoothing marginals of one chain given the switching labels.

    With the labels fixed the chains decouple: an idle step freezes the
    chain, so between consecutive active steps the state takes exactly
    one transition.  The conditional posterior is therefore plain HMM
    smoothing on the subsequence of active steps (preceded by a dummy
    emission-free step when the chain starts idle), expanded back by
    holding values across idle runs.
    """
    seq = as_observations(obs)
    labels = np.asarray(labels, dtype=int)
    m = chain
    k = params.state_counts[m]
    T = seq.length
    active = np.flatnonzero(labels == m)
    out = np.empty((T, k))
    if active.size == 0:
        out[:] = params.chain_init[m]
        return out
    ll = log_emission_table(params, seq)[m][active]
    if active[0] == 0:
        _, gamma, _ = forward_backward(params.chain_init[m], params.chain_trans[m],
                                       ll, want_pairwise=False)
        pre_row = gamma[0]
        held = gamma
    else:
        padded = np.vstack([np.zeros(k), ll])
        _, gamma, _ = forward_backward(params.chain_init[m], params.chain_trans[m],
                                       padded, want_pairwise=False)
        pre_row = gamma[0]   # frozen initial draw, before the first active step
        held = gamma[1:]
    idx = np.searchsorted(active, np.arange(T), side="right") - 1
    out[idx < 0] = pre_row
    valid = idx >= 0
    out[valid] = held[idx[valid]]
    return out


def _moments(state: _State):
    M = state.params.num_chains
    phi = state.phi
    occupancy = [phi[:, m:m + 1] * state.theta(m) for m in range(M)]
    if state.switch.xi is not None:
        switch_pairwise = state.switch.xi.sum(axis=0)
    else:
        switch_pairwise = np.zeros((M, M))
    gated = []
    for m in range(M):
        block = state.chains[m]
        if block.xi is not None:
            gated.append(np.einsum("t,tij->ij", phi[1:, m], block.xi))
        else:
            k = state.params.state_counts[m]
            gated.append(np.zeros((k, k)))
    return occupancy, switch_pairwise, gated


# Problems with at most this many surrogate values get the start
# portfolio and the quasi-Newton polish after the fixed-point loop.
POLISH_SIZE_CAP = 64


def svi_fit(obs, M: int, K, init: ModelParams | None = None, max_iter: int = 100,
            tol: float = 1e-6, seed=None, n_init: int = 1,
            learn_params: bool = True, polish: bool | None = None) -> InferenceResult:
    """Structured variational fit.

    Each outer iteration refreshes the switching surrogate and then each
    chain's surrogate (forward-backward inside every block), followed by
    parameter re-estimation from the smoothed moments.  The recorded
    bound trace is non-decreasing.  Deterministic given ``seed``.

    ``polish`` adds a direct quasi-Newton refinement of the converged
    surrogates; by default it turns on only for problems small enough
    that its cost is negligible.
    """
    seq = as_observations(obs)
    K = tuple(int(k) for k in K)
    if polish is None:
        polish = seq.length * (sum(K) + M) <= POLISH_SIZE_CAP

    def seeded_state(params, kappa, switch_marginals, state_marginals):
        """Chains started near given marginals via scaled log potentials."""
        state = _State(params, seq)
        for m in range(M):
            state.chains[m].log_surrogate = _normalize_rows(
                kappa * flog(state_marginals[m]))
            state.chains[m].refresh()
        state.switch.log_surrogate = _normalize_rows(kappa * flog(switch_marginals))
        state.switch.refresh()
        return state

    def bootstrap_state(params, kappa):
        """Start the chains near the converged mean-field marginals.

        The gating terms put enormous barriers between the frozen and
        data-consistent basins of the surrogate landscape; seeding from
        the (cheaply computed) factorized optimum lands inside the
        right basin, after which the guarded fixed point refines.
        """
        from .meanfield import mfvi_fit
        mf = mfvi_fit(seq, M, K, init=params, max_iter=max_iter,
                      learn_params=False, tol=min(tol, 1e-9))
        return seeded_state(params, kappa, mf.switch_marginals, mf.state_marginals)

    def run_guarded(state, params):
        current = state.elbo()
        trace = []
        converged = False
        for _ in range(max_iter):
            current, _ = _guarded_update(
                state, state.switch, params.switch_init, params.switch_trans,
                _candidate_log_g(state), current)
            for m in range(M):
                current, _ = _guarded_update(
                    state, state.chains[m], params.chain_init[m],
                    params.chain_trans[m], _candidate_log_h(state, m), current)
            trace.append(current)
            if has_converged(trace, tol):
                converged = True
                break
        return current, trace, converged

    def fit_once(child_seed, iters=max_iter):
        params = init if init is not None else random_init(seq, M, K, child_seed)
        require_valid(params)
        if not learn_params:
            # Surrogate optimization only: take the best of a small start
            # portfolio (mean-field bootstraps plus the flat start), then
            # refine the winner.  Large problems keep the single flat
            # start; their data is informative enough for the fixed point.
            kappas = (8.0, 2.0, None) if (polish and M > 1) else (None,)
            best = None
            for kappa in kappas:
                state = (bootstrap_state(params, kappa) if kappa is not None
                         else _State(params, seq))
                current, trace, converged = run_guarded(state, params)
                if best is None or current > best[0]:
                    best = (current, state, trace, converged)
            current, state, trace, converged = best
            if polish:
                refined = _polish(state, current)
                if refined > current:
                    current = refined
                    trace = trace + [refined]
        else:
            if init is None:
                # Stage the joint optimization: a full mean-field fit is
                # cheap and lands both the parameters and the chains in a
                # data-consistent basin the structured updates then refine.
                from .meanfield import mfvi_fit
                mf = mfvi_fit(seq, M, K, seed=child_seed, max_iter=iters, tol=tol)
                params = mf.params_hat
                state = seeded_state(params, 8.0, mf.switch_marginals,
                                     mf.state_marginals)
            else:
                state = _State(params, seq)
            current = state.elbo()
            trace = []
            converged = False
            for _ in range(iters):
                current, _ = _guarded_update(
                    state, state.switch, params.switch_init, params.switch_trans,
                    _candidate_log_g(state), current)
                for m in range(M):
                    current, _ = _guarded_update(
                        state, state.chains[m], params.chain_init[m],
                        params.chain_trans[m], _candidate_log_h(state, m), current)
                occupancy, switch_pairwise, gated = _moments(state)
                params = update_parameters(
                    params, seq,
                    occupancy=occupancy,
                    state_marginal=[state.theta(m) for m in range(M)],
                    switch_marginal=state.phi,
                    switch_pairwise=switch_pairwise,
                    gated_pairwise=gated)
                state.set_params(params)
                current = state.elbo()
                trace.append(current)
                if has_converged(trace, tol):
                    converged = True
                    break
        theta = [state.theta(m).copy() for m in range(M)]
        phi = state.phi.copy()
        d, states = decode_marginals(phi, theta)
        return InferenceResult(
            params_hat=params,
            switch_marginals=phi,
            state_marginals=theta,
            decoded_source=d,
            decoded_states=states,
            objective_trace=trace,
            iterations=len(trace),
            converged=converged,
            algorithm="svi",
            seed=child_seed,
        )

    if init is not None:
        return fit_once(seed)
    from .inference import PILOT_ITERS
    return run_restarts(fit_once, seed, n_init,
                        pilot=lambda s: fit_once(s, PILOT_ITERS).objective)
