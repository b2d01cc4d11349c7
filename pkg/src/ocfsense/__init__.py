"""Simulation of a smartphone sensing market under three allocation mechanisms."""
from .channel import SubcarrierAssignment, allocate_priority, allocate_random
from .scenario import GlobalParams, Scenario, generate_scenario

__all__ = [
    "GlobalParams",
    "Scenario",
    "SubcarrierAssignment",
    "allocate_priority",
    "allocate_random",
    "generate_scenario",
]
__version__ = "0.1.0"
