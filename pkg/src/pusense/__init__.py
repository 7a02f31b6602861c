"""Compressive spectrum sensing simulator for estimating primary-user activity
statistics."""

__version__ = "0.1.0"
