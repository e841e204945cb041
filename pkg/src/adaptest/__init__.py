"""Minimum-cost test subsets and stability-aware adaptive test-plan selection."""

__version__ = "0.1.0"
