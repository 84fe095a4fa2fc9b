"""People counting on 8x8 thermal frames.

Thin wrapper over the C++ core: architecture parsing and costs, metrics,
Pareto extraction, synthetic data, the blob-counting baseline, training,
grid exploration and reports.
"""

from ._ircount import (
    Error,
    aggregate_folds,
    canonical_arch,
    config_digest,
    cost,
    enumerate_family,
    evaluate,
    explore,
    load_sessions,
    pareto_front,
    read_results,
    run_baseline,
    train_fold,
    write_report,
    write_synthetic,
)

__all__ = [
    "Error",
    "aggregate_folds",
    "canonical_arch",
    "config_digest",
    "cost",
    "enumerate_family",
    "evaluate",
    "explore",
    "load_sessions",
    "pareto_front",
    "read_results",
    "run_baseline",
    "train_fold",
    "write_report",
    "write_synthetic",
]
