"""Tunable Catmull-Clark subdivision: spectra, weight tuning and plate analysis."""

__version__ = "0.1.0"
