"""Desk-scale whole-body humanoid motion tracking and teleoperation toolkit."""

__version__ = "0.1.0"
