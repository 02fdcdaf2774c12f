"""Fairness-aware sequential recommendation."""
