"""Discrete-event simulator for prioritized duty-cycled MAC protocols in body-area networks."""
from .config import SimConfig, parse_config
from .simulation import Simulation, run_config

__all__ = ["SimConfig", "parse_config", "Simulation", "run_config"]
__version__ = "0.1.0"
