"""Star-rating sentiment classification for short customer reviews."""

__version__ = "0.1.0"
