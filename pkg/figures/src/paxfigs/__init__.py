"""Static figures for the risk-profiling study's CSV outputs."""

__version__ = "0.1.0"
