"""Raw-image restoration with a locally multiplicative window transformer."""

__version__ = "0.1.0"
