"""Mean-field variational inference for the interleaved model.

The variational family fully factorizes over time and chains: every
switching step carries a categorical with weights ``phi[t]`` and every
component-chain step one with weights ``theta[m][t]``.  Coordinate
ascent updates each row to the softmax of its expected log joint, so the
evidence lower bound is non-decreasing across sweeps; the maximization
step reuses the shared moment-based updates.

Idle-freeze gating makes the expected transition matrix of an inactive
chain the floored log identity, which is why the floored-log sentinel
appears throughout instead of minus infinity.
"""

from __future__ import annotations

import numpy as np
from scipy.special import xlogy

from .fb import NumericalError
from .inference import (InferenceResult, VariationalState, decode_marginals,
                        has_converged, random_init, run_restarts,
                        update_parameters)
from .model import (ModelParams, as_observations, flog, log_emission_table,
                    require_valid)


class _Context:
    """Log-space parameter tables reused across sweep steps."""

    def __init__(self, params: ModelParams, obs):
        self.params = params
        self.ll = log_emission_table(params, obs)          # per chain (T, K)
        self.log_a = [flog(a) for a in params.chain_trans]
        self.log_e = [flog(np.eye(k)) for k in params.state_counts]
        self.log_az = flog(params.switch_trans)
        self.log_pi = [flog(p) for p in params.chain_init]
        self.log_piz = flog(params.switch_init)

    def ebar(self, m: int, phi_tm: float):
        """Expected log transition of chain m given its activity weight."""
        return phi_tm * self.log_a[m] + (1.0 - phi_tm) * self.log_e[m]


def _softmax(v):
    e = np.exp(v - np.max(v))
    return e / e.sum()


def sweep(ctx: _Context, vs: VariationalState, damping: float = 1.0):
    """One full coordinate-ascent pass: every theta chain, then phi, forward in t.

    Each row update is the exact maximizer given all other rows, so the
    bound cannot decrease.  ``damping < 1`` mixes old and new rows for
    stiff instances (off by default).
    """
    theta, phi = vs.theta, vs.phi
    T = phi.shape[0]
    M = len(theta)

    for m in range(M):
        th = theta[m]
        for t in range(T):
            b = phi[t, m] * ctx.ll[m][t]
            if t == 0:
                b = b + ctx.log_pi[m]
            else:
                b = b + ctx.ebar(m, phi[t, m]).T @ th[t - 1]
            if t < T - 1:
                b = b + ctx.ebar(m, phi[t + 1, m]) @ th[t + 1]
            if not np.all(np.isfinite(b)):
                raise NumericalError(f"non-finite exponent updating chain {m} at t={t}")
            row = _softmax(b)
            th[t] = row if damping >= 1.0 else damping * row + (1 - damping) * th[t]

    for t in range(T):
        c = np.array([theta[m][t] @ ctx.ll[m][t] for m in range(M)])
        if t == 0:
            c += ctx.log_piz
        else:
            c += ctx.log_az.T @ phi[t - 1]
            for m in range(M):
                c[m] += theta[m][t - 1] @ (ctx.log_a[m] - ctx.log_e[m]) @ theta[m][t]
        if t < T - 1:
            c += ctx.log_az @ phi[t + 1]
        if not np.all(np.isfinite(c)):
            raise NumericalError(f"non-finite exponent updating switch weights at t={t}")
        row = _softmax(c)
        phi[t] = row if damping >= 1.0 else damping * row + (1 - damping) * phi[t]


def _elbo(ctx: _Context, vs: VariationalState) -> float:
    theta, phi = vs.theta, vs.phi
    M = len(theta)
    total = 0.0
    for m in range(M):
        th = theta[m]
        # Emission, weighted by activity.
        total += float(np.sum(phi[:, m] * np.einsum("tk,tk->t", th, ctx.ll[m])))
        # Initial step and gated transitions.
        total += float(th[0] @ ctx.log_pi[m])
        act = np.einsum("ti,ij,tj->t", th[:-1], ctx.log_a[m], th[1:])
        idle = np.einsum("ti,ij,tj->t", th[:-1], ctx.log_e[m], th[1:])
        total += float(np.sum(phi[1:, m] * act + (1.0 - phi[1:, m]) * idle))
        # Entropy of the chain factors.
        total -= float(np.sum(xlogy(th, th)))
    total += float(phi[0] @ ctx.log_piz)
    total += float(np.einsum("ti,ij,tj->", phi[:-1], ctx.log_az, phi[1:]))
    total -= float(np.sum(xlogy(phi, phi)))
    return total


def elbo_mf(params: ModelParams, obs, vs: VariationalState) -> float:
    """Evidence lower bound of the fully factorized family.

    Always at most the exact observed-data log likelihood; equals it in
    the degenerate single-chain single-state case.
    """
    problems = vs.check()
    if problems:
        raise ValueError("invalid variational state: " + "; ".join(problems))
    return _elbo(_Context(params, as_observations(obs)), vs)


def _moments(vs: VariationalState):
    theta, phi = vs.theta, vs.phi
    M = len(theta)
    occupancy = [phi[:, m:m + 1] * theta[m] for m in range(M)]
    switch_pairwise = phi[:-1].T @ phi[1:] if phi.shape[0] > 1 else np.zeros((M, M))
    gated = []
    for m in range(M):
        th = theta[m]
        if th.shape[0] > 1:
            gated.append(np.einsum("t,ti,tj->ij", phi[1:, m], th[:-1], th[1:]))
        else:
            k = th.shape[1]
            gated.append(np.zeros((k, k)))
    return occupancy, switch_pairwise, gated


def mfvi_fit(obs, M: int, K, init: ModelParams | None = None, max_iter: int = 100,
             tol: float = 1e-6, seed=None, n_init: int = 1, damping: float = 1.0,
             learn_params: bool = True, initial_state: VariationalState | None = None
             ) -> InferenceResult:
    """Mean-field variational fit.

    Alternates coordinate-ascent sweeps over the variational rows with
    moment-based parameter updates; stops when the relative bound change
    drops below ``tol`` or after ``max_iter`` iterations.  The recorded
    bound trace is non-decreasing.  Deterministic given ``seed``.
    """
    seq = as_observations(obs)
    K = tuple(int(k) for k in K)
    T = seq.length

    def fit_once(child_seed, iters=max_iter):
        params = init if init is not None else random_init(seq, M, K, child_seed)
        require_valid(params)
        vs = initial_state if initial_state is not None else VariationalState.uniform(T, M, K)
        if initial_state is not None:
            vs = VariationalState(theta=[t.copy() for t in vs.theta],
                                  phi=vs.phi.copy(), h=vs.h, g=vs.g)
        ctx = _Context(params, seq)
        trace = []
        converged = False
        for _ in range(iters):
            sweep(ctx, vs, damping)
            if learn_params:
                occupancy, switch_pairwise, gated = _moments(vs)
                params = update_parameters(
                    params, seq,
                    occupancy=occupancy,
                    state_marginal=vs.theta,
                    switch_marginal=vs.phi,
                    switch_pairwise=switch_pairwise,
                    gated_pairwise=gated)
                ctx = _Context(params, seq)
            trace.append(_elbo(ctx, vs))
            if has_converged(trace, tol):
                converged = True
                break
        d, states = decode_marginals(vs.phi, vs.theta)
        return InferenceResult(
            params_hat=params,
            switch_marginals=vs.phi.copy(),
            state_marginals=[t.copy() for t in vs.theta],
            decoded_source=d,
            decoded_states=states,
            objective_trace=trace,
            iterations=len(trace),
            converged=converged,
            algorithm="mfvi",
            seed=child_seed,
        )

    if init is not None:
        return fit_once(seed)
    from .inference import PILOT_ITERS
    return run_restarts(fit_once, seed, n_init,
                        pilot=lambda s: fit_once(s, PILOT_ITERS).objective)
