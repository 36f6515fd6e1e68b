"""Dependency container and wiring."""
