"""Hyperspherical contrastive engine for multi-source open-set domain adaptation."""

__version__ = "0.1.0"
