"""Toolkit for following linear cloud features through geo-referenced raster
sequences and comparing their motion against wind-driven parcel advection."""

__version__ = "0.1.0"
