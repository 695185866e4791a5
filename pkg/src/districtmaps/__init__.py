"""Ensembles of districting plans, their centroids and medoids."""

__version__ = "0.1.0"
