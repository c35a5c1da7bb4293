"""Simulation and numerical verification for telomere-structured branching populations."""

__version__ = "0.1.0"
