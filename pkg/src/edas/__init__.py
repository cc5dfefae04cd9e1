"""Ensemble dialogue-act annotation: five neural annotators, label fusion,
inter-annotator reliability and dialogue-act/emotion analytics."""

__version__ = "0.1.0"
