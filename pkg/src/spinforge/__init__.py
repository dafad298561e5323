"""Simulate and compile NMR quantum-computing experiments on small spin chains."""

__version__ = "0.1.0"
