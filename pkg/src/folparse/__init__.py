"""Neural parsing of English sentences into first-order logic."""

__version__ = "0.1.0"
