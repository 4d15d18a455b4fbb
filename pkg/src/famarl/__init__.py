"""Multi-agent RL for fluid-antenna multi-cell networks.

Subpackages cover the field-response channel model (:mod:`famarl.channel`),
the Dec-POMDP environment (:mod:`famarl.env`), MAPPO and critic-free
group-relative trainers (:mod:`famarl.mappo`, :mod:`famarl.magrpo`),
closed-form and Monte-Carlo reward-variance analysis
(:mod:`famarl.variance`), and experiment orchestration
(:mod:`famarl.evaluation`, :mod:`famarl.cli`).
"""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigError,
    GeometryError,
    InfeasibleConfigError,
    TrainingDivergedError,
)

__all__ = [
    "__version__",
    "CheckpointError",
    "ConfigError",
    "GeometryError",
    "InfeasibleConfigError",
    "TrainingDivergedError",
]
