"""Adapter for published CLIP encoders emitting pointbridge embedding stores."""

__version__ = "0.1.0"
