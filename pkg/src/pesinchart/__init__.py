"""Lyapunov charts and countable Markov covers for nonuniformly hyperbolic toral maps."""

__version__ = "0.1.0"
