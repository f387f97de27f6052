"""User-centered concept mining, document tagging, and taxonomy construction."""

__version__ = "0.1.0"
