"""Scoring utilities: assignment matching, accuracy, parameter error, and
the Monte-Carlo harness.

Predicted source labels are arbitrary up to renaming, so every score
first aligns labels with ground truth through a minimum-cost assignment
(Hungarian algorithm).  Ties resolve to the lexicographically smallest
permutation, which keeps outputs reproducible.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .model import ModelParams

_BIG_COST = 1e18


def _solve_min_cost(cost):
    """Total cost and row-to-column map of one optimal assignment (O(n^3)).

    Shortest-augmenting-path Hungarian with potentials; accepts any
    finite costs, negatives included.
    """
    c = np.asarray(cost, dtype=float)
    n = c.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)   # match[j] = row assigned to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = np.inf
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = c[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        row_to_col[match[j] - 1] = j - 1
    total = float(c[np.arange(n), row_to_col].sum())
    return total, row_to_col


def munkres_assign(cost) -> np.ndarray:
    """Permutation minimizing the total assignment cost.

    Returns ``perm`` with row i assigned to column ``perm[i]``.  Among
    cost-equal optima the lexicographically smallest permutation is
    returned, found by fixing rows in order and re-solving the remainder.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("cost matrix must be square")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix must be finite")
    n = c.shape[0]
    if n == 0:
        return np.empty(0, dtype=int)
    best_total, _ = _solve_min_cost(c)
    tol = 1e-9 * (1.0 + abs(best_total))

    perm = np.empty(n, dtype=int)
    rows = list(range(n))
    cols = list(range(n))
    prefix = 0.0
    for i in rows:
        remaining_rows = [r for r in rows if r > i]
        for candidate in cols:
            rest_cols = [cc for cc in cols if cc != candidate]
            if remaining_rows:
                sub_total, _ = _solve_min_cost(c[np.ix_(remaining_rows, rest_cols)])
            else:
                sub_total = 0.0
            if prefix + c[i, candidate] + sub_total <= best_total + tol:
                perm[i] = candidate
                prefix += c[i, candidate]
                cols = rest_cols
                break
        else:  # pragma: no cover - defensive, cannot happen for finite costs
            raise RuntimeError("assignment refinement failed")
    return perm


def overlap_matrix(pred, true, num_sources: int) -> np.ndarray:
    """Square-padded confusion-overlap counts (true rows, predicted columns).

    Predicted labels may exceed ``num_sources`` (e.g. symbol-level
    clusterings); extra rows/columns pad with zero overlap.
    """
    pred = np.asarray(pred, dtype=int)
    true = np.asarray(true, dtype=int)
    if pred.shape != true.shape:
        raise ValueError("label sequences must have equal length")
    if np.any(true < 0) or np.any(true >= num_sources):
        raise ValueError("true label out of range")
    if np.any(pred < 0):
        raise ValueError("predicted label out of range")
    size = max(num_sources, int(pred.max()) + 1 if pred.size else 1)
    overlap = np.zeros((size, size))
    np.add.at(overlap, (true, pred), 1.0)
    return overlap


def match_labels(pred, true, num_sources: int) -> np.ndarray:
    """Overlap-maximizing map from true source index to predicted label."""
    overlap = overlap_matrix(pred, true, num_sources)
    return munkres_assign(-overlap)


def accuracy(pred, true, num_sources: int) -> float:
    """Fraction of observations assigned to the matched source.

    Invariant under any renaming of the predicted labels; equals one
    minus the de-interleaving error probability.
    """
    overlap = overlap_matrix(pred, true, num_sources)
    perm = munkres_assign(-overlap)
    matched = overlap[np.arange(overlap.shape[0]), perm].sum()
    return float(matched / len(np.asarray(true)))


def error_probability(pred, true, num_sources: int) -> float:
    return 1.0 - accuracy(pred, true, num_sources)


def _state_alignment_cost(mu_est, mu_true):
    dist = ((mu_est[:, None, :] - mu_true[None, :, :]) ** 2).sum(axis=2)
    perm = munkres_assign(dist)
    return float(dist[np.arange(dist.shape[0]), perm].sum()), perm


def mse_means(estimated: ModelParams, truth: ModelParams, chain_perm=None):
    """Mean squared error of the symbol means after alignment.

    Chains are aligned first (by the supplied label-matching permutation
    when available, otherwise by best mean agreement), then states inside
    each matched chain pair are aligned by a second assignment pass.
    Returns ``(mse, chain_perm, state_perms)``.
    """
    if estimated.num_chains != truth.num_chains:
        raise ValueError("chain count mismatch")
    if estimated.obs_dim != truth.obs_dim:
        raise ValueError("observation dimension mismatch")
    M = truth.num_chains

    if chain_perm is None:
        cost = np.empty((M, M))
        for i in range(M):
            for j in range(M):
                if estimated.state_counts[i] != truth.state_counts[j]:
                    cost[i, j] = _BIG_COST
                else:
                    cost[i, j], _ = _state_alignment_cost(
                        estimated.symbol_means[i], truth.symbol_means[j])
        chain_perm = munkres_assign(cost)
    chain_perm = np.asarray(chain_perm, dtype=int)

    total = 0.0
    state_perms = []
    for i in range(M):
        j = int(chain_perm[i])
        if estimated.state_counts[i] != truth.state_counts[j]:
            raise ValueError("aligned chains have different state counts")
        sse, perm = _state_alignment_cost(estimated.symbol_means[i],
                                          truth.symbol_means[j])
        state_perms.append(perm)
        total += sse
    return total / truth.total_states, chain_perm, state_perms


def monte_carlo(run_trial, trials: int, seed=0, jobs: int = 1):
    """Run seeded trials and aggregate their scalar metrics.

    ``run_trial(seed) -> dict`` supplies one trial's metrics.  Trials use
    independently spawned seeds, so the aggregate is reproducible from
    ``seed`` alone.  Failed trials are counted and excluded; if every
    trial fails the harness raises.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    seeds = [int(s.generate_state(1)[0])
             for s in np.random.SeedSequence(seed).spawn(trials)]
    rows = []
    failures = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_trial, s) for s in seeds]
            for s, fut in zip(seeds, futures):
                try:
                    rows.append((s, fut.result()))
                except Exception as exc:  # noqa: BLE001 - trial isolation
                    failures.append((s, repr(exc)))
    else:
        for s in seeds:
            try:
                rows.append((s, run_trial(s)))
            except Exception as exc:  # noqa: BLE001 - trial isolation
                failures.append((s, repr(exc)))
    if not rows:
        raise RuntimeError(f"all {trials} trials failed; first error: {failures[0][1]}")

    keys = sorted(rows[0][1].keys())
    metrics = {}
    for key in keys:
        vals = np.array([r[1][key] for r in rows if key in r[1]], dtype=float)
        metrics[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return {
        "trials": trials,
        "failures": len(failures),
        "failure_log": failures,
        "metrics": metrics,
        "per_trial": rows,
    }
