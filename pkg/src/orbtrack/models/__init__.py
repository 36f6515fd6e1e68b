"""Pydantic schemas and numeric value types."""
