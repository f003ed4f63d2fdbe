"""Reaction systems shipped with the package."""
