"""Nutrition-from-titles estimation and engagement prediction toolkit."""

__version__ = "0.1.0"
