"""Configuration, experiment drivers, output writers and the command line."""
from .config import RunConfig, from_mapping, load_config, parse_seeds, validate
from .experiments import (
    compare_policies,
    convergence_study,
    paired_run,
    reconstruction_errors,
    run_experiment,
    sign_relation_rate,
    summarize,
    tune_eq5_tau,
)

__all__ = [
    "RunConfig",
    "compare_policies",
    "convergence_study",
    "from_mapping",
    "load_config",
    "paired_run",
    "parse_seeds",
    "reconstruction_errors",
    "run_experiment",
    "sign_relation_rate",
    "summarize",
    "tune_eq5_tau",
    "validate",
]
