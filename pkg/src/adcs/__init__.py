"""Attitude determination and control toolkit for spacecraft with VSCMG arrays."""

__version__ = "0.1.0"
