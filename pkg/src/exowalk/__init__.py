"""Compass-gait workbench for an adaptive negative-damping hip exoskeleton."""

__version__ = "0.1.0"
