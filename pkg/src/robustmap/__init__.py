"""Robust multi-robot environmental mapping under sensor failures.

Order-k Voronoi deployment that minimises team missed-detection
probability, a combined detection/measurement sensor model, and a
particle filter that reconstructs the field.
"""
__version__ = "0.1.0"
