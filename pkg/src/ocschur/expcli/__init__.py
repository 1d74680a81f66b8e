"""Experiment driver: configuration, experiment suites, result emission and CLI."""
from ocschur.expcli.experiments import (run, run_accuracy_cliff, run_and_emit, run_phi_sweep,
                                        run_precond_compare, run_scalability)
from ocschur.expcli.io import ExperimentConfig, emit, parse, strip_timing

__all__ = ["ExperimentConfig", "emit", "parse", "run", "run_accuracy_cliff", "run_and_emit",
           "run_phi_sweep", "run_precond_compare", "run_scalability", "strip_timing"]
