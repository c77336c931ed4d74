"""Ruelle probability cascades, Poisson-Dirichlet partitions and quasi-stationarity checks."""

__version__ = "0.1.0"
