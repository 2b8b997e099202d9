"""Mixed-autonomy roundabout microsimulation and learning toolkit.

Human-driven vehicles follow a calibrated car-following and gap-acceptance
model; autonomous vehicles share one learned policy. The package covers the
simulator, the reinforcement-learning environment and trainer, penetration-
rate evaluation, demand calibration, and a real-time driving bridge.
"""
from .config import (DriverParams, EmissionParams, RewardConfig,
                     ScenarioConfig)
from .network import RoadNetwork, build_roundabout

__version__ = "0.1.0"

__all__ = ["DriverParams", "EmissionParams", "RewardConfig",
           "ScenarioConfig", "RoadNetwork", "build_roundabout",
           "__version__"]
