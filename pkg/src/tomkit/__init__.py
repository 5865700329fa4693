"""Planar tool-object manipulation: affordances, manoeuvrability, planning and a push simulator."""

__version__ = "0.1.0"
