"""Benchmarks: cold starts, churn, and distributed SGD."""

from .churn import run_churn
from .cluster import LocalCluster
from .coldstart import run_coldstart
from .sgd_bench import compare_modes, run_sgd

__all__ = ["run_churn", "LocalCluster", "run_coldstart", "compare_modes",
           "run_sgd"]
