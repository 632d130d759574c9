"""Forecast verification scores and evaluation."""
