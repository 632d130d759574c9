"""Utility modules for the pipeline."""
