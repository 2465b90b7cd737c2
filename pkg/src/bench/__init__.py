"""
Benchmark workloads: Zipf key selection, the commutativity baseline and run statistics
"""

from .acop import commutative_compatibility, commutes
from .workload import (BenchAlarmError, RunStats, WorkloadSpec, run_live_bench,
                       run_simulated_bench)
from .zipf import BenchConfigError, ZipfGenerator

__all__ = [
    'BenchAlarmError',
    'BenchConfigError',
    'RunStats',
    'WorkloadSpec',
    'ZipfGenerator',
    'commutative_compatibility',
    'commutes',
    'run_live_bench',
    'run_simulated_bench',
]
