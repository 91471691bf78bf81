"""Simulation laboratory for distributed stochastic approximation with gossip
and its law-of-iterated-logarithm convergence rates."""

__version__ = "0.1.0"
