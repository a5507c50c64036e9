"""Inference kernels, cost ledger and detection metrics for a lightweight
small-object YOLOv8 variant (P2 head, no P5 head, Fast-C2f neck, Dysample
upsampling, EMA-augmented head)."""
from .errors import (ArgumentError, DomainError, FormatError, GradCheckError, GraphError,
                     LightdetError, MetricError, MissingWeightError, NumericalError, ShapeError)

__version__ = "0.1.0"

__all__ = [
    "ArgumentError", "DomainError", "FormatError", "GradCheckError", "GraphError", "LightdetError",
    "MetricError", "MissingWeightError", "NumericalError", "ShapeError", "__version__",
]
