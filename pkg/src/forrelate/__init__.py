"""Classical estimators for forrelation, k-query amplitudes, graph-based forrelation and level-2 QAOA."""

__version__ = "0.1.0"
