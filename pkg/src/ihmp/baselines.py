"""Baseline de-interleavers: Gaussian mixture, Gaussian HMM, and the
discrete penalized-likelihood partition search driven by a genetic
algorithm.

The mixture and HMM baselines cluster at the symbol level (one component
per symbol), so their labels live in symbol space; scoring maps them
onto sources by overlap matching, which is exactly where their model
mismatch shows up on interleaved data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .fb import forward_backward
from .inference import has_converged
from .model import as_observations, flog
from .simulate import kmeans_1d

VAR_COLLAPSE = 1e-10
MAX_GA_ALPHABET = 20


@dataclass
class MixtureResult:
    weights: np.ndarray
    means: np.ndarray          # (C, D)
    covariances: np.ndarray    # (C, D, D)
    responsibilities: np.ndarray
    labels: np.ndarray
    loglik_trace: list
    converged: bool


def _gauss_logpdf(x, mean, cov):
    d = x.shape[1]
    chol = np.linalg.cholesky(cov)
    sol = np.linalg.solve(chol, (x - mean).T)
    return (-0.5 * d * np.log(2 * np.pi) - np.log(np.diag(chol)).sum()
            - 0.5 * np.sum(sol * sol, axis=0))


def _random_components(x, n, rng):
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.maximum(hi - lo, 1e-3)
    means = rng.uniform(lo, lo + span, size=(n, x.shape[1]))
    base = np.atleast_2d(np.cov(x.T)) if x.shape[0] > 1 else np.eye(x.shape[1])
    base = base + 1e-6 * np.eye(x.shape[1])
    covs = np.repeat(base[None, :, :], n, axis=0)
    return means, covs


def gmm_fit(obs, num_components: int, seed=None, max_iter: int = 100,
            tol: float = 1e-6) -> MixtureResult:
    """Gaussian mixture by EM with random initialization.

    The log likelihood is non-decreasing across iterations.  A component
    whose variance collapses is re-drawn once; a second collapse raises.
    """
    if num_components < 1:
        raise ValueError("num_components must be >= 1")
    x = as_observations(obs).values
    T, d = x.shape
    rng = np.random.default_rng(seed)
    means, covs = _random_components(x, num_components, rng)
    weights = np.full(num_components, 1.0 / num_components)
    retried = np.zeros(num_components, dtype=bool)

    trace = []
    converged = False
    resp = None
    for _ in range(max_iter):
        logp = np.stack([np.log(max(weights[c], 1e-300))
                         + _gauss_logpdf(x, means[c], covs[c])
                         for c in range(num_components)], axis=1)
        norm = logsumexp(logp, axis=1)
        trace.append(float(norm.sum()))
        resp = np.exp(logp - norm[:, None])
        if has_converged(trace, tol):
            converged = True
            break
        counts = resp.sum(axis=0)
        weights = np.maximum(counts / T, 1e-12)
        weights /= weights.sum()
        for c in range(num_components):
            if counts[c] < 1e-12:
                continue
            means[c] = resp[:, c] @ x / counts[c]
            diff = x - means[c]
            covs[c] = (resp[:, c, None] * diff).T @ diff / counts[c]
            covs[c] += 1e-9 * np.eye(d)
            if np.min(np.linalg.eigvalsh(covs[c])) < VAR_COLLAPSE:
                if retried[c]:
                    raise RuntimeError(f"component {c} collapsed twice")
                retried[c] = True
                means[c] = rng.uniform(x.min(axis=0), x.max(axis=0))
                covs[c] = (np.atleast_2d(np.cov(x.T)) if T > 1 else np.eye(d)) \
                    + 1e-6 * np.eye(d)
    labels = np.argmax(resp, axis=1)
    return MixtureResult(weights=weights, means=means, covariances=covs,
                         responsibilities=resp, labels=labels,
                         loglik_trace=trace, converged=converged)


@dataclass
class GaussianHMMResult:
    init: np.ndarray
    trans: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    marginals: np.ndarray
    labels: np.ndarray
    loglik_trace: list
    converged: bool


def hmm_fit(obs, num_states: int, seed=None, max_iter: int = 100,
            tol: float = 1e-6) -> GaussianHMMResult:
    """Gaussian-emission HMM by Baum-Welch; labels from smoothed argmax."""
    if num_states < 1:
        raise ValueError("num_states must be >= 1")
    x = as_observations(obs).values
    T, d = x.shape
    rng = np.random.default_rng(seed)
    means, covs = _random_components(x, num_states, rng)
    init = rng.dirichlet(np.full(num_states, 5.0))
    trans = rng.dirichlet(np.full(num_states, 5.0), size=num_states)
    retried = np.zeros(num_states, dtype=bool)

    trace = []
    converged = False
    gamma = None
    for _ in range(max_iter):
        le = np.stack([_gauss_logpdf(x, means[c], covs[c])
                       for c in range(num_states)], axis=1)
        loglik, gamma, xi = forward_backward(init, trans, le)
        trace.append(loglik)
        if has_converged(trace, tol):
            converged = True
            break
        init = np.maximum(gamma[0], 1e-12)
        init /= init.sum()
        if xi is not None:
            counts = xi.sum(axis=0)
            rows = np.maximum(counts, 0.0)
            rows = np.maximum(rows / np.maximum(rows.sum(axis=1, keepdims=True), 1e-300),
                              1e-12)
            trans = rows / rows.sum(axis=1, keepdims=True)
        occ = gamma.sum(axis=0)
        for c in range(num_states):
            if occ[c] < 1e-12:
                continue
            means[c] = gamma[:, c] @ x / occ[c]
            diff = x - means[c]
            covs[c] = (gamma[:, c, None] * diff).T @ diff / occ[c]
            covs[c] += 1e-9 * np.eye(d)
            if np.min(np.linalg.eigvalsh(covs[c])) < VAR_COLLAPSE:
                if retried[c]:
                    raise RuntimeError(f"state {c} collapsed twice")
                retried[c] = True
                means[c] = rng.uniform(x.min(axis=0), x.max(axis=0))
                covs[c] = (np.atleast_2d(np.cov(x.T)) if T > 1 else np.eye(d)) \
                    + 1e-6 * np.eye(d)
    labels = np.argmax(gamma, axis=1)
    return GaussianHMMResult(init=init, trans=trans, means=means,
                             covariances=covs, marginals=gamma, labels=labels,
                             loglik_trace=trace, converged=converged)


def _first_order_loglik(sequence) -> float:
    """Plug-in log likelihood of a symbol sequence under its own
    maximum-likelihood first-order transition estimates."""
    if len(sequence) < 2:
        return 0.0
    pairs = {}
    totals = {}
    for a, b in zip(sequence[:-1], sequence[1:]):
        pairs[(a, b)] = pairs.get((a, b), 0) + 1
        totals[a] = totals.get(a, 0) + 1
    return float(sum(n * np.log(n / totals[a]) for (a, b), n in pairs.items()))


def partition_complexity(partition, num_blocks=None) -> float:
    """Parameter-count penalty of a partition at first-order dynamics."""
    blocks = [set(b) for b in partition]
    m = len(blocks)
    return float(sum(len(b) * (len(b) - 1) for b in blocks) + (m - 1) * m)


def imp_penalized_cost(symbols, partition, beta: float = 0.5) -> float:
    """Penalized-likelihood score of splitting a symbol stream by a partition.

    The stream splits into the block-index switching sequence plus one
    subsequence per block; the empirical entropy is the total plug-in
    negative log likelihood of those first-order sequences divided by the
    stream length, and the penalty scales the parameter count by
    ``beta * log(length + 1)``.  Lower is better.
    """
    symbols = list(symbols)
    n = len(symbols)
    if n < 1:
        raise ValueError("symbol sequence must be non-empty")
    blocks = [frozenset(b) for b in partition]
    if any(len(b) == 0 for b in blocks):
        raise ValueError("partition blocks must be non-empty")
    seen = set()
    for b in blocks:
        if seen & b:
            raise ValueError("partition blocks must be disjoint")
        seen |= b
    lookup = {s: i for i, b in enumerate(blocks) for s in b}
    missing = [s for s in symbols if s not in lookup]
    if missing:
        raise ValueError(f"symbol {missing[0]!r} not covered by the partition")

    switching = [lookup[s] for s in symbols]
    total = _first_order_loglik(switching)
    for i in range(len(blocks)):
        sub = [s for s in symbols if lookup[s] == i]
        total += _first_order_loglik(sub)
    entropy = -total / n
    return entropy + beta * partition_complexity(blocks) * np.log(n + 1.0)


def _canonical(genome, alphabet):
    """Decode a label genome into a canonical partition (sorted blocks)."""
    blocks = {}
    for sym, label in zip(alphabet, genome):
        blocks.setdefault(int(label), []).append(sym)
    return tuple(sorted((frozenset(b) for b in blocks.values()),
                        key=lambda b: sorted(b)[0]))


@dataclass
class PartitionSearchResult:
    partition: tuple
    cost: float
    cost_trace: list = field(default_factory=list)
    converged: bool = True
    evaluations: int = 0


def ga_partition_search(symbols, beta: float = 0.5, population: int = 50,
                        generations: int = 200, seed=None,
                        mutation_rate: float = 0.3) -> PartitionSearchResult:
    """Genetic search over alphabet partitions minimizing the penalized cost.

    Genomes assign each alphabet symbol a block label; crossover mixes
    parent labelings symbol-wise and mutation moves one symbol to another
    (possibly new) block.  Elitism keeps the best genome, so the reported
    cost trace is non-increasing; with a population of one the scheme
    degenerates to stochastic hill climbing.  Deterministic given seed.
    """
    symbols = list(symbols)
    alphabet = sorted(set(symbols))
    n_sym = len(alphabet)
    if n_sym > MAX_GA_ALPHABET:
        raise ValueError(f"alphabet too large for partition search ({n_sym} > {MAX_GA_ALPHABET})")
    if population < 1 or generations < 1:
        raise ValueError("population and generations must be >= 1")
    rng = np.random.default_rng(seed)

    cache = {}
    evaluations = 0

    def cost_of(genome):
        nonlocal evaluations
        part = _canonical(genome, alphabet)
        if part not in cache:
            cache[part] = imp_penalized_cost(symbols, part, beta)
            evaluations += 1
        return cache[part]

    pop = [rng.integers(0, n_sym, size=n_sym) for _ in range(population)]
    costs = [cost_of(g) for g in pop]
    best_idx = int(np.argmin(costs))
    best, best_cost = pop[best_idx].copy(), costs[best_idx]
    trace = [best_cost]
    last_improvement = 0

    def tournament():
        contenders = rng.integers(0, population, size=min(3, population))
        return pop[min(contenders, key=lambda i: costs[i])]

    for gen in range(generations):
        nxt = [best.copy()]  # elitism
        while len(nxt) < population:
            if population > 1:
                a, b = tournament(), tournament()
                mask = rng.random(n_sym) < 0.5
                child = np.where(mask, a, b)
            else:
                child = best.copy()
            if rng.random() < mutation_rate or population == 1:
                child = child.copy()
                child[rng.integers(0, n_sym)] = rng.integers(0, n_sym)
            nxt.append(child)
        pop = nxt
        costs = [cost_of(g) for g in pop]
        gen_best = int(np.argmin(costs))
        if costs[gen_best] < best_cost - 1e-12:
            best, best_cost = pop[gen_best].copy(), costs[gen_best]
            last_improvement = gen
        trace.append(best_cost)

    converged = (generations - last_improvement) > generations // 4
    return PartitionSearchResult(partition=_canonical(best, alphabet),
                                 cost=best_cost, cost_trace=trace,
                                 converged=converged, evaluations=evaluations)


def ga_deinterleave(obs, num_sources: int, total_symbols: int, beta: float = 0.5,
                    population: int = 50, generations: int = 200, seed=None):
    """Label a continuous stream by quantizing then partition-searching.

    Observations quantize to ``total_symbols`` nearest-mean codewords;
    the genetic search groups codewords into sub-alphabets and every
    observation inherits its codeword's block index as source label.
    Returns ``(labels, search_result, codebook)``.
    """
    x = as_observations(obs).values
    if x.shape[1] != 1:
        raise ValueError("quantized partition search expects scalar observations")
    centers, assign = kmeans_1d(x.ravel(), total_symbols)
    search = ga_partition_search(list(assign), beta=beta, population=population,
                                 generations=generations, seed=seed)
    block_of = {s: i for i, b in enumerate(search.partition) for s in b}
    labels = np.array([block_of[a] for a in assign], dtype=int)
    return labels, search, centers
