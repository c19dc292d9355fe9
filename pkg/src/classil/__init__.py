"""Memoryless class-incremental learning over feature vectors.

A small MLP classifier is trained over a stream of class batches; each class's
initial classifier weights are frozen in a bank, replayed at evaluation time
(optionally standardized per classifier), and calibrated by per-state mean
prediction statistics. Evaluation covers top-k accuracy, averaged incremental
accuracy, the G_IL gap aggregate, and a six-way error typology.
"""

from . import analysis, datahub, metrics, neuralnet, normalize, scoring, weightbank
from .errors import (
    ClassILError,
    ConfigError,
    DataFormatError,
    DegenerateInputError,
    IntegrityError,
    ShapeError,
)

__all__ = [
    "analysis",
    "datahub",
    "metrics",
    "neuralnet",
    "normalize",
    "scoring",
    "weightbank",
    "ClassILError",
    "ConfigError",
    "DataFormatError",
    "DegenerateInputError",
    "IntegrityError",
    "ShapeError",
]

__version__ = "0.1.0"
