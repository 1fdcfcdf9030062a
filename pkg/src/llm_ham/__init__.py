"""Generative agents under a two-type heterogeneous agent model.

Elicits strategy weights and price expectations from an LLM-backed agent (or a
deterministic oracle standing in for one), extracts fundamentalist and
trend-follower reaction parameters, and runs the grid and time-series
experiments around them.
"""

__version__ = "0.1.0"
