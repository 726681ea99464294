"""Session-variability compensation toolkit for speaker verification scores."""

__version__ = "0.1.0"
