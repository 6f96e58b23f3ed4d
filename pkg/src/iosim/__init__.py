"""Seed-reproducible simulation of coordinated influence campaigns on a synthetic social network."""

from .domain import SOFTWARE_VERSION, SimulationConfig, load_config

__version__ = "0.1.0"
__all__ = ["SimulationConfig", "load_config", "SOFTWARE_VERSION", "__version__"]
