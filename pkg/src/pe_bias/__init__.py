"""Topic-level preference elicitation with popularity-bias correction.

Synthetic data generation, topic discovery on item graphs, simulated
preference-elicitation datasets, and the MF / MF-IPS / ExpoMF estimators
with their evaluation harness.
"""

from .core import (
    ConstantPropensity,
    FactorModel,
    FullPreferenceMatrix,
    InteractionTable,
    PerCellPropensity,
    PerLevelPropensity,
    TopicAssignment,
    TopicInteractionTable,
)
from .errors import PEBiasError

__version__ = "0.1.0"

__all__ = [
    "ConstantPropensity",
    "FactorModel",
    "FullPreferenceMatrix",
    "InteractionTable",
    "PEBiasError",
    "PerCellPropensity",
    "PerLevelPropensity",
    "TopicAssignment",
    "TopicInteractionTable",
]
