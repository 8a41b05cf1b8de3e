"""Rare-class nucleus augmentation by context-matched copy-replace and copy-paste."""

__version__ = "0.1.0"
