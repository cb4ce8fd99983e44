"""Capacity prediction and virtual screening for Li-I battery electrolyte formulations."""

__version__ = "0.1.0"
