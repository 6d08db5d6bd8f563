"""Serialization: model parameters, datasets, fit results, sensor streams.

Parameters and results travel as JSON documents (floats keep full
repr precision, comfortably beyond twelve significant digits); datasets
and label/trace outputs travel as CSV with fixed, documented columns.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .model import (LatentTrajectory, ModelParams, ObservationSequence,
                    as_observations, renormalized, validate)

DATASET_COLUMNS = ("index", "value", "true_source", "true_state")


def params_to_dict(params: ModelParams) -> dict:
    return {
        "num_chains": params.num_chains,
        "state_counts": list(params.state_counts),
        "obs_dim": params.obs_dim,
        "switch_init": params.switch_init.tolist(),
        "switch_trans": params.switch_trans.tolist(),
        "chain_init": [v.tolist() for v in params.chain_init],
        "chain_trans": [a.tolist() for a in params.chain_trans],
        "symbol_means": [m.tolist() for m in params.symbol_means],
        "shared_cov": params.shared_cov.tolist(),
    }


def params_from_dict(doc: dict) -> ModelParams:
    params = ModelParams(
        num_chains=doc["num_chains"],
        state_counts=tuple(doc["state_counts"]),
        obs_dim=doc["obs_dim"],
        switch_init=doc["switch_init"],
        switch_trans=doc["switch_trans"],
        chain_init=tuple(doc["chain_init"]),
        chain_trans=tuple(doc["chain_trans"]),
        symbol_means=tuple(doc["symbol_means"]),
        shared_cov=doc["shared_cov"],
    )
    # Hand-written configs carry rounded decimals; accept distributions
    # off by up to this much and renormalize them exactly on load.
    LOAD_ROUNDING_TOL = 1e-6

    def rounding_only(msgs):
        import re
        for msg in msgs:
            m = re.search(r"sums to ([0-9.eE+-]+)", msg)
            if m is None or abs(float(m.group(1)) - 1.0) > LOAD_ROUNDING_TOL:
                return False
        return True

    problems = validate(params)
    if not problems:
        return params
    if rounding_only(problems):
        candidate = renormalized(params)
        if not validate(candidate):
            return candidate
    raise ValueError("invalid model document: " + "; ".join(problems))


def save_params(path, params: ModelParams):
    Path(path).write_text(json.dumps(params_to_dict(params), indent=2))


def load_params(path) -> ModelParams:
    return params_from_dict(json.loads(Path(path).read_text()))


def write_dataset_csv(path, obs, traj: LatentTrajectory | None = None):
    """Dataset CSV: index, value columns, true source, active-chain state."""
    seq = as_observations(obs)
    value_cols = ([f"value_{d}" for d in range(seq.dim)]
                  if seq.dim > 1 else ["value"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", *value_cols, "true_source", "true_state"])
        for t in range(seq.length):
            if traj is not None:
                src = int(traj.switch[t])
                state = int(traj.states[src][t])
            else:
                src = state = ""
            writer.writerow([t, *(repr(float(v)) for v in seq.values[t]), src, state])


def read_dataset_csv(path):
    """Read a dataset CSV back into observations and optional labels."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        value_idx = [i for i, name in enumerate(header) if name.startswith("value")]
        if not value_idx:
            raise ValueError(f"{path}: no value columns found")
        src_idx = header.index("true_source") if "true_source" in header else None
        values, sources = [], []
        for row in reader:
            values.append([float(row[i]) for i in value_idx])
            if src_idx is not None and row[src_idx] != "":
                sources.append(int(row[src_idx]))
    obs = ObservationSequence(np.asarray(values))
    labels = np.asarray(sources, dtype=int) if len(sources) == len(values) else None
    return obs, labels


def write_metadata(path, payload: dict):
    from . import __version__
    doc = dict(payload)
    doc.setdefault("library_version", __version__)
    Path(path).write_text(json.dumps(doc, indent=2, default=_jsonify))


def _jsonify(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, ModelParams):
        return params_to_dict(value)
    raise TypeError(f"cannot serialize {type(value)!r}")


def result_to_dict(result) -> dict:
    """JSON form of a fit result (model-based or baseline)."""
    doc = {
        "algorithm": getattr(result, "algorithm", ""),
        "iterations": getattr(result, "iterations", None),
        "converged": bool(getattr(result, "converged", False)),
        "objective_trace": [float(v) for v in getattr(result, "objective_trace", [])],
        "decoded_source": np.asarray(result.decoded_source).tolist(),
        "seed": getattr(result, "seed", None),
    }
    params = getattr(result, "params_hat", None)
    if params is not None:
        doc["params_hat"] = params_to_dict(params)
    if getattr(result, "switch_marginals", None) is not None:
        doc["switch_marginals"] = np.asarray(result.switch_marginals).tolist()
        doc["state_marginals"] = [np.asarray(sm).tolist()
                                  for sm in result.state_marginals]
        doc["decoded_states"] = [np.asarray(s).tolist()
                                 for s in result.decoded_states]
    return doc


def save_result(path, result):
    Path(path).write_text(json.dumps(result_to_dict(result), indent=2))


def write_labels_csv(path, decoded_source, true_source=None):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if true_source is None:
            writer.writerow(["index", "decoded_source"])
            for t, d in enumerate(decoded_source):
                writer.writerow([t, int(d)])
        else:
            writer.writerow(["index", "decoded_source", "true_source"])
            for t, (d, s) in enumerate(zip(decoded_source, true_source)):
                writer.writerow([t, int(d), int(s)])


def write_trace_csv(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective"])
        for i, v in enumerate(trace):
            writer.writerow([i, repr(float(v))])


def write_rows_csv(path, rows, fieldnames=None):
    """Tidy CSV from a list of homogeneous dict rows."""
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to write")
    if fieldnames is None:
        fieldnames = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_motion_csv(path):
    """Read a three-axis sensor stream (header plus three numeric columns)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(
                    f"{path}: row {lineno} has {len(row)} columns, expected 3")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(
                    f"{path}: row {lineno} contains a non-numeric value") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(rows)
