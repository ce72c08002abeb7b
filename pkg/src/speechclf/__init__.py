"""Text, audio and hybrid classification pipeline for interview speech."""

__version__ = "0.1.0"
