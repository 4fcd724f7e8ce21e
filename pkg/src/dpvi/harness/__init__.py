"""Synthetic data, metrics, experiment drivers and benchmarks."""
