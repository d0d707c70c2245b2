"""Continuous-time dynamic graph learning with memory, temporal attention,
neighbor co-occurrence and anonymous walks with restart."""

__version__ = "0.1.0"
