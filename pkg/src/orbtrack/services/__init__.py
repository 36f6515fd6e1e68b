"""Numerical services layer."""
