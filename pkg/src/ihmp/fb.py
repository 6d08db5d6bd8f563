"""Scaled forward-backward recursions for a finite-state chain.

Shared by the exact product-chain E-step, the structured variational
inner chains, and the Baum-Welch baseline.  Emissions are supplied as a
log-density table; each time step is renormalized by its row maximum so
that the recursion never overflows, and per-step scaling constants keep
it from underflowing.  The total data log-likelihood is recovered from
the scaling constants.
"""

from __future__ import annotations

import numpy as np


class NumericalError(RuntimeError):
    """Raised when a recursion produces a zero or non-finite normalizer."""


def forward_backward(init, trans, log_emissions, want_pairwise: bool = True):
    """Smoothing marginals of a hidden Markov chain.

    Parameters
    ----------
    init : (K,) initial state distribution.
    trans : (K, K) row-stochastic transition matrix.
    log_emissions : (T, K) per-step state log likelihoods.
    want_pairwise : also return the (T-1, K, K) pairwise marginals.

    Returns
    -------
    loglik : float, log P(observations).
    gamma : (T, K) posterior state marginals, rows summing to 1.
    xi : (T-1, K, K) posterior pairwise marginals (or None).
    """
    pi = np.asarray(init, dtype=float)
    a = np.asarray(trans, dtype=float)
    le = np.asarray(log_emissions, dtype=float)
    if not np.all(np.isfinite(le)):
        raise NumericalError("non-finite log emission encountered")
    T, K = le.shape

    shift = le.max(axis=1)
    b = np.exp(le - shift[:, None])  # row max 1, no overflow

    alpha = np.empty((T, K))
    scale = np.empty(T)
    cur = pi * b[0]
    scale[0] = cur.sum()
    if not scale[0] > 0 or not np.isfinite(scale[0]):
        raise NumericalError("forward pass vanished at t=0")
    alpha[0] = cur / scale[0]
    for t in range(1, T):
        cur = (alpha[t - 1] @ a) * b[t]
        scale[t] = cur.sum()
        if not scale[t] > 0 or not np.isfinite(scale[t]):
            raise NumericalError(f"forward pass vanished at t={t}")
        alpha[t] = cur / scale[t]

    beta = np.empty((T, K))
    beta[T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = (a @ (b[t + 1] * beta[t + 1])) / scale[t + 1]

    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)

    xi = None
    if want_pairwise and T > 1:
        xi = np.empty((T - 1, K, K))
        for t in range(1, T):
            m = (alpha[t - 1][:, None] * a) * (b[t] * beta[t])[None, :]
            xi[t - 1] = m / scale[t]

    loglik = float(np.sum(np.log(scale)) + np.sum(shift))
    return loglik, gamma, xi


def forward_loglik(init, trans, log_emissions) -> float:
    """Log likelihood only (forward pass, no smoothing)."""
    pi = np.asarray(init, dtype=float)
    a = np.asarray(trans, dtype=float)
    le = np.asarray(log_emissions, dtype=float)
    T, K = le.shape
    shift = le.max(axis=1)
    b = np.exp(le - shift[:, None])
    total = 0.0
    cur = pi * b[0]
    s = cur.sum()
    if not s > 0:
        raise NumericalError("forward pass vanished at t=0")
    total += np.log(s)
    cur /= s
    for t in range(1, T):
        cur = (cur @ a) * b[t]
        s = cur.sum()
        if not s > 0:
            raise NumericalError(f"forward pass vanished at t={t}")
        total += np.log(s)
        cur /= s
    return float(total + shift.sum())


def backward_loglik(init, trans, log_emissions) -> float:
    """Log likelihood recovered from the backward recursion.

    Used as a consistency check against :func:`forward_loglik`.
    """
    pi = np.asarray(init, dtype=float)
    a = np.asarray(trans, dtype=float)
    le = np.asarray(log_emissions, dtype=float)
    T, K = le.shape
    shift = le.max(axis=1)
    b = np.exp(le - shift[:, None])
    total = 0.0
    cur = np.ones(K)
    for t in range(T - 1, 0, -1):
        cur = a @ (b[t] * cur)
        s = cur.sum()
        if not s > 0:
            raise NumericalError(f"backward pass vanished at t={t}")
        total += np.log(s)
        cur /= s
    final = float(pi @ (b[0] * cur))
    if not final > 0:
        raise NumericalError("backward pass vanished at t=0")
    return float(np.log(final) + total + shift.sum())
