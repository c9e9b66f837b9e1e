"""Watermark embedding, detection and black-box detectability evaluation."""

__version__ = "0.1.0"
