"""Sequence-level emotion intensity estimation from per-frame affect features."""

__version__ = "0.1.0"
