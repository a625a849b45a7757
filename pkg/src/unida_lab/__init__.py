"""Desk-scale universal domain adaptation laboratory on synthetic data."""

from .estimator import NumericAbort, UniDAClassifier

__version__ = "0.1.0"

__all__ = ["UniDAClassifier", "NumericAbort", "__version__"]
