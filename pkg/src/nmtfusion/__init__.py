"""Neural machine translation trained under a fixed language model."""

__version__ = "0.1.0"
