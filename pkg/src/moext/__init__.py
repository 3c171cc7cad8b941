"""Micro-expression recognition by self-supervised motion extraction."""

__version__ = "0.1.0"
