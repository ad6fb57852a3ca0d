"""Weakly supervised land-cover change detection from coarse labels."""

__version__ = "0.1.0"
