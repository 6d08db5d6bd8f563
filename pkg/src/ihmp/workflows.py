"""Experiment wiring: algorithm dispatch plus the named benchmark sweeps.

Every sweep emits tidy rows (one dict per grid point, algorithm, and
statistic) ready for CSV, and every trial is a module-level function of
its seed so the Monte-Carlo harness can fan trials out across processes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .baselines import ga_deinterleave, gmm_fit, hmm_fit
from .exact import em_fit
from .meanfield import mfvi_fit
from .metrics import accuracy, match_labels, monte_carlo, mse_means
from .model import as_observations
from .simulate import (ScenarioConfig, make_radar_scenario, make_scenario,
                       quantize_and_interleave, synthetic_motion_streams,
                       table1_params)
from .structured import svi_fit

MODEL_ALGORITHMS = ("em", "mfvi", "svi")
BASELINE_ALGORITHMS = ("gmm", "hmm", "ga")
ALGORITHMS = MODEL_ALGORITHMS + BASELINE_ALGORITHMS


@dataclass
class BaselineFit:
    """Uniform face of a baseline method for the scoring pipeline."""

    algorithm: str
    decoded_source: np.ndarray
    objective_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    detail: object = None
    params_hat: object = None
    switch_marginals: object = None
    state_marginals: object = None
    decoded_states: object = None
    seed: int | None = None


def fit_dataset(obs, algorithm: str, M: int, K, seed=None, max_iter: int = 100,
                tol: float = 1e-6, n_init: int = 1, beta: float = 0.5,
                ga_population: int = 50, ga_generations: int = 200,
                state_cap: int = 4096):
    """Run one de-interleaver on a dataset.

    Model-based fitters cluster observations into ``M`` sources with the
    given state counts; the mixture/HMM baselines cluster at the symbol
    level (one component per symbol) and the partition search quantizes
    to the symbol count before grouping.
    """
    K = tuple(int(k) for k in K)
    total = sum(K)
    if algorithm == "em":
        return em_fit(obs, M, K, seed=seed, max_iter=max_iter, tol=tol,
                      n_init=n_init, state_cap=state_cap)
    if algorithm == "mfvi":
        return mfvi_fit(obs, M, K, seed=seed, max_iter=max_iter, tol=tol,
                        n_init=n_init)
    if algorithm == "svi":
        return svi_fit(obs, M, K, seed=seed, max_iter=max_iter, tol=tol,
                       n_init=n_init)
    if algorithm == "gmm":
        fit = gmm_fit(obs, num_components=total, seed=seed, max_iter=max_iter, tol=tol)
        return BaselineFit(algorithm="gmm", decoded_source=fit.labels,
                           objective_trace=fit.loglik_trace,
                           iterations=len(fit.loglik_trace),
                           converged=fit.converged, detail=fit, seed=seed)
    if algorithm == "hmm":
        fit = hmm_fit(obs, num_states=total, seed=seed, max_iter=max_iter, tol=tol)
        return BaselineFit(algorithm="hmm", decoded_source=fit.labels,
                           objective_trace=fit.loglik_trace,
                           iterations=len(fit.loglik_trace),
                           converged=fit.converged, detail=fit, seed=seed)
    if algorithm == "ga":
        labels, search, _ = ga_deinterleave(obs, M, total, beta=beta,
                                            population=ga_population,
                                            generations=ga_generations, seed=seed)
        return BaselineFit(algorithm="ga", decoded_source=labels,
                           objective_trace=search.cost_trace,
                           iterations=len(search.cost_trace),
                           converged=search.converged, detail=search, seed=seed)
    raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")


def _est_to_true_perm(decoded, true_switch, M):
    """Chain alignment (estimated -> true) from the label matching."""
    to_pred = match_labels(decoded, true_switch, M)
    perm = np.full(M, -1, dtype=int)
    for true_idx, pred in enumerate(to_pred):
        if true_idx < M and 0 <= pred < M:
            perm[pred] = true_idx
    if np.any(perm < 0):  # matched against padding; fall back to identity gaps
        missing = [i for i in range(M) if i not in perm]
        for i in range(M):
            if perm[i] < 0:
                perm[i] = missing.pop(0)
    return perm


def scenario_trial(seed, kind: str, T: int, sd: float, missing: float,
                   algorithm: str, M: int, K, n_init: int = 1,
                   max_iter: int = 100, beta: float = 0.5,
                   ga_population: int = 50, ga_generations: int = 200,
                   with_mse: bool = False) -> dict:
    """One seeded dataset-plus-fit trial; returns the scored metrics."""
    params, obs, traj = make_scenario(ScenarioConfig(
        kind=kind, T=T, sd=sd, missing_ratio=missing, seed=seed))
    t0 = time.perf_counter()
    result = fit_dataset(obs, algorithm, M=M, K=K, seed=seed, max_iter=max_iter,
                         n_init=n_init, beta=beta, ga_population=ga_population,
                         ga_generations=ga_generations)
    elapsed = time.perf_counter() - t0
    acc = accuracy(result.decoded_source, traj.switch, M)
    out = {
        "accuracy": acc,
        "pe": 1.0 - acc,
        "converged": float(bool(result.converged)),
        "seconds": elapsed,
        "seconds_per_iteration": elapsed / max(result.iterations, 1),
    }
    if with_mse and getattr(result, "params_hat", None) is not None and params is not None:
        perm = _est_to_true_perm(result.decoded_source, traj.switch, M)
        mse, _, _ = mse_means(result.params_hat, params, chain_perm=perm)
        out["mse"] = mse
    return out


def accuracy_vs_sd(kind: str, sd_grid, algorithms, trials: int = 20, T: int = 900,
                   seed: int = 0, jobs: int = 1, n_init: int = 1,
                   with_mse: bool = False, M: int = 3, K=(2, 2, 2),
                   max_iter: int = 100):
    """Accuracy (and optionally mean-parameter MSE) across noise levels."""
    rows = []
    for i, sd in enumerate(sd_grid):
        for algorithm in algorithms:
            trial = partial(scenario_trial, kind=kind, T=T, sd=float(sd),
                            missing=0.0, algorithm=algorithm, M=M, K=tuple(K),
                            n_init=n_init, max_iter=max_iter, with_mse=with_mse)
            agg = monte_carlo(trial, trials=trials, seed=seed + 7919 * i, jobs=jobs)
            for stat, vals in agg["metrics"].items():
                rows.append({"preset": "accuracy_vs_sd", "kind": kind,
                             "x_name": "sd", "x_value": float(sd),
                             "algorithm": algorithm, "statistic": f"{stat}_mean",
                             "value": vals["mean"], "trials": trials,
                             "failures": agg["failures"]})
                rows.append({"preset": "accuracy_vs_sd", "kind": kind,
                             "x_name": "sd", "x_value": float(sd),
                             "algorithm": algorithm, "statistic": f"{stat}_std",
                             "value": vals["std"], "trials": trials,
                             "failures": agg["failures"]})
    return rows


def missing_sweep(kind: str, missing_grid, algorithms, sd: float = 0.1,
                  trials: int = 20, T: int = 900, seed: int = 0, jobs: int = 1,
                  n_init: int = 1, M: int = 3, K=(2, 2, 2), max_iter: int = 100):
    """Robustness to randomly deleted observations."""
    rows = []
    for i, ratio in enumerate(missing_grid):
        for algorithm in algorithms:
            trial = partial(scenario_trial, kind=kind, T=T, sd=sd,
                            missing=float(ratio), algorithm=algorithm, M=M,
                            K=tuple(K), n_init=n_init, max_iter=max_iter)
            agg = monte_carlo(trial, trials=trials, seed=seed + 104729 * i, jobs=jobs)
            for stat, vals in agg["metrics"].items():
                rows.append({"preset": "missing_sweep", "kind": kind,
                             "x_name": "missing_ratio", "x_value": float(ratio),
                             "algorithm": algorithm, "statistic": f"{stat}_mean",
                             "value": vals["mean"], "trials": trials,
                             "failures": agg["failures"]})
    return rows


def radar_trial(seed, alpha: float, jitter_var: float, T: int, algorithm: str,
                n_init: int = 1, max_iter: int = 100) -> dict:
    obs, traj = make_radar_scenario(alpha=alpha, jitter_var=jitter_var, T=T,
                                    seed=seed)
    t0 = time.perf_counter()
    result = fit_dataset(obs, algorithm, M=2, K=(2, 2), seed=seed,
                         max_iter=max_iter, n_init=n_init)
    elapsed = time.perf_counter() - t0
    acc = accuracy(result.decoded_source, traj.switch, 2)
    return {"accuracy": acc, "pe": 1.0 - acc, "seconds": elapsed,
            "converged": float(bool(result.converged))}


def radar_alpha_sweep(alphas, algorithms=("svi", "em"), jitter_var: float = 0.8,
                      T: int = 900, trials: int = 20, seed: int = 0,
                      jobs: int = 1, n_init: int = 1, max_iter: int = 100):
    """Accuracy against the initial-phase separation of two identical radars."""
    rows = []
    for i, alpha in enumerate(alphas):
        for algorithm in algorithms:
            trial = partial(radar_trial, alpha=float(alpha), jitter_var=jitter_var,
                            T=T, algorithm=algorithm, n_init=n_init,
                            max_iter=max_iter)
            agg = monte_carlo(trial, trials=trials, seed=seed + 15013 * i, jobs=jobs)
            rows.append({"preset": "radar_alpha", "kind": "radar",
                         "x_name": "alpha", "x_value": float(alpha),
                         "algorithm": algorithm, "statistic": "accuracy_mean",
                         "value": agg["metrics"]["accuracy"]["mean"],
                         "trials": trials, "failures": agg["failures"]})
    return rows


def radar_jitter_grid(jitter_vars, alphas, T: int = 900, trials: int = 10,
                      seed: int = 0, jobs: int = 1, n_init: int = 1,
                      max_iter: int = 100):
    """Structured-fit accuracy over the jitter-variance x overlap grid."""
    rows = []
    for i, jv in enumerate(jitter_vars):
        for j, alpha in enumerate(alphas):
            trial = partial(radar_trial, alpha=float(alpha), jitter_var=float(jv),
                            T=T, algorithm="svi", n_init=n_init, max_iter=max_iter)
            agg = monte_carlo(trial, trials=trials,
                              seed=seed + 23003 * i + 301 * j, jobs=jobs)
            rows.append({"preset": "radar_jitter_grid", "kind": "radar",
                         "x_name": "alpha", "x_value": float(alpha),
                         "jitter_var": float(jv), "algorithm": "svi",
                         "statistic": "accuracy_mean",
                         "value": agg["metrics"]["accuracy"]["mean"],
                         "trials": trials, "failures": agg["failures"]})
    return rows


def quantized_trial(seed, qn: int, T: int, algorithm: str, n_init: int = 1,
                    max_iter: int = 100) -> dict:
    stream_a, stream_b = synthetic_motion_streams(T, seed=seed)
    obs, traj, _ = quantize_and_interleave(stream_a, stream_b, qn, seed=seed + 1)
    t0 = time.perf_counter()
    result = fit_dataset(obs, algorithm, M=2, K=(qn, qn), seed=seed,
                         max_iter=max_iter, n_init=n_init)
    elapsed = time.perf_counter() - t0
    acc = accuracy(result.decoded_source, traj.switch, 2)
    return {"accuracy": acc, "seconds": elapsed,
            "seconds_per_iteration": elapsed / max(result.iterations, 1)}


def quantized_sweep(qns, algorithms=("svi", "em"), T: int = 600, trials: int = 10,
                    seed: int = 0, jobs: int = 1, n_init: int = 1,
                    max_iter: int = 100, state_cap: int = 4096):
    """Accuracy and per-iteration time against the quantization level."""
    rows = []
    for i, qn in enumerate(qns):
        for algorithm in algorithms:
            if algorithm == "em" and 2 * qn * qn > state_cap:
                continue
            trial = partial(quantized_trial, qn=int(qn), T=T, algorithm=algorithm,
                            n_init=n_init, max_iter=max_iter)
            agg = monte_carlo(trial, trials=trials, seed=seed + 40013 * i, jobs=jobs)
            for stat in ("accuracy", "seconds_per_iteration"):
                rows.append({"preset": "quantized_sweep", "kind": "quantized_streams",
                             "x_name": "qn", "x_value": int(qn),
                             "algorithm": algorithm, "statistic": f"{stat}_mean",
                             "value": agg["metrics"][stat]["mean"],
                             "trials": trials, "failures": agg["failures"]})
    return rows


def bound_comparison(scenarios=(1, 2, 3), algorithms=MODEL_ALGORITHMS,
                     sd_grid=None, trials: int = 20, T: int = 900, seed: int = 0,
                     jobs: int = 1, n_init: int = 1, max_iter: int = 100):
    """Empirical error of each fitter against the theoretical lower bound."""
    from .bound import compare_to_bound
    rows = []
    for scenario in scenarios:
        for algorithm in algorithms:
            for row in compare_to_bound(algorithm, scenario, sd_grid=sd_grid,
                                        trials=trials, T=T,
                                        seed=seed + 131 * scenario, jobs=jobs,
                                        max_iter=max_iter, n_init=n_init):
                rows.append({"preset": "bound_comparison", "kind": "error_scenario",
                             "x_name": "sd", "x_value": row["sd"],
                             "algorithm": algorithm, "scenario": scenario,
                             "statistic": "pe_mean", "value": row["mean_pe"],
                             "bound": row["bound"], "trials": row["trials"],
                             "failures": row["failures"]})
    return rows
