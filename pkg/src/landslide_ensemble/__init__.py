"""Heterogeneous segmentation ensembles for landslide detection."""

__version__ = "0.1.0"
