"""Passenger biosecurity risk profiling: models, CV study, screening simulator."""

__version__ = "0.1.0"
