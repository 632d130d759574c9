"""Raster file formats, synthetic storms and exports."""
