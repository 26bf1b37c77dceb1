"""Discrete calculus for metric-valued Sobolev maps."""
