"""Budgeted active learning with exact fine labels and noisy coarse labels."""

__version__ = "0.1.0"
