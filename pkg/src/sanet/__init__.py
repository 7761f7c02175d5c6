"""Secure ad hoc networking stack over a broadcast frame medium."""

__version__ = "0.1.0"
