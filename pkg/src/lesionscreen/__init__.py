"""Skin-lesion screening: segmentation, local features, mid-level coding and SVM evaluation."""

__version__ = "0.1.0"
