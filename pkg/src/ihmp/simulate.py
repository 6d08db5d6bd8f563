"""Synthetic interleaved data: generic sampling plus the named scenarios.

Every generator is deterministic given its seed.  Sampling tolerates a
positive-semidefinite covariance so that zero observation noise yields
observations exactly equal to the active symbol means; the parameter
sets returned by scenario builders floor the covariance so they remain
valid for fitting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (LatentTrajectory, ModelParams, ObservationSequence,
                    as_observations, stationary_distribution, validate)

# Scenario chains are run this long before the retained samples.
BURN_IN = 1000
# Smallest standard deviation written into scenario parameter sets, so a
# zero-noise scenario still carries a positive-definite covariance.
MIN_SD = 1e-6

_SCENARIO_MEANS = {
    1: (1.0, 2.0, 3.0, 4.0),
    2: (1.0, 3.0, 2.0, 4.0),
    3: (1.0, 3.0, 4.0, 2.0),
}

KINDS = ("generic", "table1_disjoint", "table1_nondisjoint",
         "error_scenario_1", "error_scenario_2", "error_scenario_3",
         "radar", "quantized_streams")


@dataclass
class ScenarioConfig:
    """Declarative description of one simulation scenario."""

    kind: str
    T: int
    sd: float = 0.1
    missing_ratio: float = 0.0
    seed: int = 0
    alpha: float = 15.0        # radar initial-phase overlap, microseconds
    jitter_var: float = 0.8    # radar PRI jitter variance, microseconds^2
    qn: int = 2                # quantization levels for the two-stream merge
    params: ModelParams | None = None  # explicit model for kind="generic"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.sd < 0:
            raise ValueError("sd must be >= 0")
        if not 0 <= self.missing_ratio < 1:
            raise ValueError("missing_ratio must lie in [0, 1)")
        if self.qn < 2:
            raise ValueError("qn must be >= 2")


def _psd_sqrt(cov):
    vals, vecs = np.linalg.eigh(np.asarray(cov, dtype=float))
    if np.min(vals) < -1e-9:
        raise ValueError("covariance must be positive-semidefinite for sampling")
    return vecs * np.sqrt(np.maximum(vals, 0.0))


def _sample_states(params: ModelParams, T: int, rng) -> LatentTrajectory:
    M = params.num_chains
    cum_z = np.cumsum(params.switch_trans, axis=1)
    switch = np.empty(T, dtype=int)
    switch[0] = rng.choice(M, p=params.switch_init)
    u = rng.random(T)
    for t in range(1, T):
        switch[t] = np.searchsorted(cum_z[switch[t - 1]], u[t])

    states = []
    for m in range(M):
        k = params.state_counts[m]
        cum = np.cumsum(params.chain_trans[m], axis=1)
        seq = np.empty(T, dtype=int)
        seq[0] = rng.choice(k, p=params.chain_init[m])
        um = rng.random(T)
        for t in range(1, T):
            if switch[t] == m:
                seq[t] = np.searchsorted(cum[seq[t - 1]], um[t])
            else:
                seq[t] = seq[t - 1]
        states.append(seq)
    return LatentTrajectory(switch=switch, states=tuple(states))


def sample_ihmp(params: ModelParams, T: int, seed=None, burn_in: int = 0):
    """Ancestral sample of length T (after an optional discarded burn-in).

    The trajectory satisfies idle-freeze by construction and each
    observation is drawn around the active chain's current symbol mean.
    A singular covariance is allowed here: zero noise reproduces the
    means exactly.
    """
    problems = [p for p in validate(params) if "positive-definite" not in p]
    if problems:
        raise ValueError("invalid model parameters: " + "; ".join(problems))
    rng = np.random.default_rng(seed)
    total = T + burn_in
    traj = _sample_states(params, total, rng)
    root = _psd_sqrt(params.shared_cov)
    noise = rng.standard_normal((total, params.obs_dim)) @ root.T
    values = np.empty((total, params.obs_dim))
    for t in range(total):
        z = traj.switch[t]
        values[t] = params.symbol_means[z][traj.states[z][t]] + noise[t]
    if burn_in:
        traj = LatentTrajectory(switch=traj.switch[burn_in:],
                                states=tuple(s[burn_in:] for s in traj.states))
        values = values[burn_in:]
    return ObservationSequence(values), traj


def _flip_chain(beta1=0.1, beta2=0.1):
    return np.array([[beta1, 1.0 - beta1], [1.0 - beta2, beta2]])


def _uniform_offdiag_switch(M: int, stay: float):
    a = np.full((M, M), (1.0 - stay) / (M - 1))
    np.fill_diagonal(a, stay)
    return a


def table1_params(sd: float, disjoint: bool = True) -> ModelParams:
    """Three two-symbol sources with flip-heavy dynamics.

    Disjoint sub-alphabet means are (1,2), (4,5), (7,8); the non-disjoint
    variant moves the first source onto (1,4) so it shares a value with
    the second.  All transition matrices keep 0.1 self-transition mass;
    the three-source switching chain spreads the rest uniformly.
    """
    a = _flip_chain()
    az = _uniform_offdiag_switch(3, 0.1)
    means = ((1.0, 2.0), (4.0, 5.0), (7.0, 8.0)) if disjoint else \
            ((1.0, 4.0), (4.0, 5.0), (7.0, 8.0))
    return ModelParams(
        num_chains=3,
        state_counts=(2, 2, 2),
        obs_dim=1,
        switch_init=stationary_distribution(az),
        switch_trans=az,
        chain_init=tuple(stationary_distribution(a) for _ in range(3)),
        chain_trans=(a, a, a),
        symbol_means=tuple(np.array(m)[:, None] for m in means),
        shared_cov=[[max(sd, MIN_SD) ** 2]],
    )


def error_scenario_params(scenario: int, sd: float) -> ModelParams:
    """Two binary-state sources with the three benchmark mean orderings."""
    if scenario not in _SCENARIO_MEANS:
        raise ValueError("scenario must be 1, 2 or 3")
    mu11, mu21, mu12, mu22 = _SCENARIO_MEANS[scenario]
    a = _flip_chain()
    return ModelParams(
        num_chains=2,
        state_counts=(2, 2),
        obs_dim=1,
        switch_init=stationary_distribution(a),
        switch_trans=a,
        chain_init=(stationary_distribution(a), stationary_distribution(a)),
        chain_trans=(a, a),
        symbol_means=([[mu11], [mu21]], [[mu12], [mu22]]),
        shared_cov=[[max(sd, MIN_SD) ** 2]],
    )


def _sample_scenario(params: ModelParams, T: int, sd: float, seed):
    """Burned-in state sample with exact-sd observation noise."""
    rng = np.random.default_rng(seed)
    traj = _sample_states(params, T + BURN_IN, rng)
    traj = LatentTrajectory(switch=traj.switch[BURN_IN:],
                            states=tuple(s[BURN_IN:] for s in traj.states))
    means = np.array([params.symbol_means[traj.switch[t]][traj.states[traj.switch[t]][t]]
                      for t in range(T)])
    values = means + sd * rng.standard_normal((T, params.obs_dim))
    return ObservationSequence(values), traj


def make_scenario(config: ScenarioConfig):
    """Build a scenario's parameters and one sampled dataset.

    Returns ``(params, observations, trajectory)``; missing-observation
    corruption is applied afterwards when the config requests it.
    """
    kind = config.kind
    if kind == "generic":
        if config.params is None:
            raise ValueError("generic scenario requires explicit model parameters")
        obs, traj = sample_ihmp(config.params, config.T, seed=config.seed)
        params = config.params
    elif kind in ("table1_disjoint", "table1_nondisjoint"):
        params = table1_params(config.sd, disjoint=(kind == "table1_disjoint"))
        obs, traj = _sample_scenario(params, config.T, config.sd, config.seed)
    elif kind.startswith("error_scenario_"):
        params = error_scenario_params(int(kind[-1]), config.sd)
        obs, traj = _sample_scenario(params, config.T, config.sd, config.seed)
    elif kind == "radar":
        obs, traj = make_radar_scenario(config.alpha, config.jitter_var,
                                        config.T, config.seed)
        params = radar_equivalent_params()
    elif kind == "quantized_streams":
        stream_a, stream_b = synthetic_motion_streams(config.T, config.seed)
        obs, traj, _ = quantize_and_interleave(stream_a, stream_b, config.qn,
                                               seed=config.seed + 1)
        params = None
    else:  # pragma: no cover - guarded by ScenarioConfig
        raise ValueError(f"unknown scenario kind {kind!r}")

    if config.missing_ratio > 0:
        obs, traj = apply_missing(obs, traj, config.missing_ratio,
                                  seed=config.seed + 10_000)
    return params, obs, traj


def apply_missing(obs, traj: LatentTrajectory, ratio: float, seed=None):
    """Delete floor(ratio * T) uniformly chosen positions from data and labels.

    Remaining observations keep their relative order.  The surviving
    label sequence is for scoring only; freezing is no longer guaranteed
    across the gaps.
    """
    if not 0 <= ratio < 1:
        raise ValueError("missing ratio must lie in [0, 1)")
    seq = as_observations(obs)
    T = seq.length
    drop = int(np.floor(ratio * T))
    if drop == 0:
        return seq, traj
    rng = np.random.default_rng(seed)
    removed = rng.choice(T, size=drop, replace=False)
    keep = np.setdiff1d(np.arange(T), removed)
    return (ObservationSequence(seq.values[keep]),
            LatentTrajectory(switch=traj.switch[keep],
                             states=tuple(s[keep] for s in traj.states)))


RADAR_RF_MEANS = (1245.0, 1230.0)   # kHz
RADAR_RF_SD = 1.0                   # kHz
RADAR_PRI_MEAN = 50.0               # microseconds


def radar_equivalent_params() -> ModelParams:
    """Nominal interleaved-model parameters describing the radar scenario.

    Both radars alternate between the same two RF symbols; the true
    switching process is induced by arrival times and is not exactly
    Markov, so the switching matrix here is only a reference value.
    """
    alternate = np.array([[0.0, 1.0], [1.0, 0.0]])
    az = _flip_chain()
    means = np.array(RADAR_RF_MEANS)[:, None]
    return ModelParams(
        num_chains=2,
        state_counts=(2, 2),
        obs_dim=1,
        switch_init=[0.5, 0.5],
        switch_trans=az,
        chain_init=([0.5, 0.5], [0.5, 0.5]),
        chain_trans=(alternate, alternate),
        symbol_means=(means, means.copy()),
        shared_cov=[[RADAR_RF_SD ** 2]],
    )


def make_radar_scenario(alpha: float, jitter_var: float, T: int, seed=None):
    """Two identical jittered-PRI radars merged by time of arrival.

    Each radar alternates its two RF symbols, fires with inter-pulse
    intervals N(50, jitter_var) microseconds, and starts at a uniform
    initial phase: radar 0 in [0, 10], radar 1 in [alpha, alpha + 10].
    The observation stream is the noisy RF value in arrival order and
    the labels identify the emitting radar.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    rng = np.random.default_rng(seed)
    phases = (rng.uniform(0.0, 10.0), rng.uniform(alpha, alpha + 10.0))
    times, values, labels, symbols = [], [], [], []
    for r in range(2):
        intervals = rng.normal(RADAR_PRI_MEAN, np.sqrt(jitter_var), size=T - 1)
        intervals = np.maximum(intervals, 1.0)
        toa = phases[r] + np.concatenate([[0.0], np.cumsum(intervals)])
        first = rng.integers(0, 2)
        sym = (first + np.arange(T)) % 2
        rf = np.array(RADAR_RF_MEANS)[sym] + RADAR_RF_SD * rng.standard_normal(T)
        times.append(toa)
        values.append(rf)
        labels.append(np.full(T, r))
        symbols.append(sym)
    times = np.concatenate(times)
    order = np.argsort(times, kind="stable")[:T]
    values = np.concatenate(values)[order]
    labels = np.concatenate(labels)[order]
    symbols = np.concatenate(symbols)[order]

    states = []
    for r in range(2):
        seq = np.empty(T, dtype=int)
        current = symbols[labels == r][0] if np.any(labels == r) else 0
        for t in range(T):
            if labels[t] == r:
                current = symbols[t]
            seq[t] = current
        states.append(seq)
    traj = LatentTrajectory(switch=labels, states=tuple(states))
    return ObservationSequence(values[:, None]), traj


def kmeans_1d(values, k: int, max_iter: int = 100):
    """Lloyd's algorithm on a 1-D sample with deterministic quantile init.

    Returns sorted centers and per-value level assignments.  Raises when
    fewer distinct values exist than requested levels.
    """
    x = np.asarray(values, dtype=float).ravel()
    if np.unique(x).size < k:
        raise ValueError(f"cannot quantize to {k} levels: only "
                         f"{np.unique(x).size} distinct values")
    centers = np.quantile(x, (np.arange(k) + 0.5) / k)
    # Quantile init can duplicate centers on highly repetitive data.
    for i in range(1, k):
        if centers[i] <= centers[i - 1]:
            centers[i] = np.nextafter(centers[i - 1], np.inf)
    assign = None
    for _ in range(max_iter):
        new_assign = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            sel = assign == j
            if np.any(sel):
                centers[j] = x[sel].mean()
        order = np.argsort(centers)
        centers = centers[order]
        assign = np.argsort(order)[assign]
    return centers, assign


def quantize_and_interleave(stream_a, stream_b, qn: int, seed=None):
    """Norm-reduce, quantize, and randomly interleave two 3-axis streams.

    Each 3-axis sample collapses to its Euclidean norm; each stream is
    quantized to ``qn`` levels by 1-D k-means; a Bernoulli(1/2) switching
    sequence merges the two quantized streams while preserving their
    internal order (once a stream is exhausted the other drains).
    Returns the merged observations, the true-source trajectory, and the
    per-stream codebooks.
    """
    if qn < 2:
        raise ValueError("qn must be >= 2")
    streams = []
    for name, s in (("first", stream_a), ("second", stream_b)):
        arr = np.asarray(s, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
            raise ValueError(f"{name} stream must be a non-empty (n, 3) array")
        streams.append(np.linalg.norm(arr, axis=1))
    rng = np.random.default_rng(seed)
    codebooks, levels = [], []
    for norms in streams:
        centers, assign = kmeans_1d(norms, qn)
        codebooks.append(centers)
        levels.append(assign)

    n_a, n_b = len(streams[0]), len(streams[1])
    labels = np.empty(n_a + n_b, dtype=int)
    ia = ib = 0
    for t in range(n_a + n_b):
        if ia < n_a and ib < n_b:
            labels[t] = 0 if rng.random() < 0.5 else 1
        else:
            labels[t] = 0 if ia < n_a else 1
        if labels[t] == 0:
            ia += 1
        else:
            ib += 1

    T = n_a + n_b
    values = np.empty(T)
    states = [np.empty(T, dtype=int), np.empty(T, dtype=int)]
    idx = [0, 0]
    current = [int(levels[0][0]), int(levels[1][0])]
    for t in range(T):
        src = labels[t]
        lvl = int(levels[src][idx[src]])
        values[t] = codebooks[src][lvl]
        idx[src] += 1
        current[src] = lvl
        states[0][t] = current[0]
        states[1][t] = current[1]
    traj = LatentTrajectory(switch=labels, states=tuple(states))
    return ObservationSequence(values[:, None]), traj, tuple(codebooks)


def synthetic_motion_streams(total: int, seed=None):
    """Two stand-in 3-axis sensor streams with distinct magnitude dynamics.

    A rough proxy for two people's motion traces: each stream's sample
    norm follows a persistent two-level process plus noise, with the two
    streams living on different magnitude bands.
    """
    rng = np.random.default_rng(seed)
    n_a = total // 2
    n_b = total - n_a
    specs = ((10.0, 2.0, n_a), (14.0, 2.5, n_b))
    streams = []
    for base, amp, n in specs:
        state = rng.integers(0, 2)
        norms = np.empty(max(n, 1))
        for t in range(max(n, 1)):
            if rng.random() < 0.3:
                state = 1 - state
            norms[t] = base + amp * (2 * state - 1) + 0.4 * rng.standard_normal()
        direction = rng.standard_normal((max(n, 1), 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        streams.append(np.abs(norms)[:, None] * direction)
    return streams[0], streams[1]
