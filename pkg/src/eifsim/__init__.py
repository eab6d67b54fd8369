"""Deterministic household simulator and evaluation harness for embodied
instruction following with online semantic feature maps."""

__version__ = "0.1.0"
