"""Confidence-bounded search for certifiably hard templates in dynamic benchmarks."""

__version__ = "0.1.0"
