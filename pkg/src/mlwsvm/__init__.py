"""Multilevel (weighted) SVM for imbalanced classification of data with missing values."""

__version__ = "0.1.0"
