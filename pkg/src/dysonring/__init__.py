"""Dyson-ring mission design pipeline: chains, rendezvous tables, dispatch, refinement."""

__version__ = "0.1.0"
