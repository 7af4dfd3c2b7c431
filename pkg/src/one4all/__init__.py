"""One-shot natural-language mission planning for heterogeneous farm robots."""

__version__ = "0.1.0"
