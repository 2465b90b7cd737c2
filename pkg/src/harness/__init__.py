"""
Adversary harness: deterministic simulation, attack scripts and checkers
"""

from .adversary import AttackScript, Interposer, run_scenario
from .checkers import CheckOutcome, check_fork_linearizable, check_linearizable
from .simulation import Simulation, SimulationOutcome

__all__ = [
    'AttackScript',
    'CheckOutcome',
    'Interposer',
    'Simulation',
    'SimulationOutcome',
    'check_fork_linearizable',
    'check_linearizable',
    'run_scenario',
]
