"""Offline embedding exporter for the trial-outcome pipeline cache format."""

__version__ = "0.1.0"
