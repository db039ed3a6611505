"""Dependency-safe Dockerfile instruction re-ordering for cheaper rebuilds."""

__version__ = "0.1.0"
