"""De-interleaving of interleaved hidden Markov processes.

A library plus experiment CLI for representing mixtures of Gaussian
hidden Markov processes with a switching chain, separating interleaved
observation streams (exact EM, mean-field VI, structured VI), scoring
against baselines, and evaluating the closed-form error lower bound.
"""

from .model import (LOG_FLOOR, LOG_ZERO, LatentTrajectory, ModelParams,
                    ObservationSequence, count_partitions_ihmp,
                    count_partitions_imp, gated_transition_logprob,
                    log_emission, log_joint, stationary_distribution,
                    validate)
from .inference import InferenceResult, VariationalState, decode

__version__ = "0.1.0"

__all__ = [
    "LOG_FLOOR",
    "LOG_ZERO",
    "LatentTrajectory",
    "ModelParams",
    "ObservationSequence",
    "InferenceResult",
    "VariationalState",
    "count_partitions_ihmp",
    "count_partitions_imp",
    "decode",
    "gated_transition_logprob",
    "log_emission",
    "log_joint",
    "stationary_distribution",
    "validate",
    "__version__",
]
