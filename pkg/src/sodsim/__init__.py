"""Energy-aware ad-hoc network simulator with priority-driven in-network caching."""

from .config import Scenario, parse_scenario
from .simulation import InvariantBreach, NetworkSimulation, simulate

__version__ = "0.1.0"

__all__ = ["Scenario", "parse_scenario", "InvariantBreach", "NetworkSimulation", "simulate"]
