"""Simulation and probabilistic verification of an autonomous quadrotor
pick-and-place mission."""

__version__ = "0.1.0"
