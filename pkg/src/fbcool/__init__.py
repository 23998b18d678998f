"""Frequency-domain model and inference toolkit for measurement-based feedback
cooling of an optomechanical resonator."""

__version__ = "0.1.0"
