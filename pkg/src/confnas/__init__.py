"""Desk-scale Conformer NAS and speaker-adapted ASR pipeline."""

__version__ = "0.1.0"
