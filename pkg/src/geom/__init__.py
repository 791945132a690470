"""Numerical semi-Riemannian geometry on a single coordinate chart."""
