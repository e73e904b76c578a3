"""Two-sided fairness benchmarks for point-of-interest recommendation."""

__version__ = "0.3.0"
