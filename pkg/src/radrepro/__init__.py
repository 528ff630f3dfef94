"""Radiomics reproducibility and prognostic-value workbench."""

__version__ = "0.1.0"
