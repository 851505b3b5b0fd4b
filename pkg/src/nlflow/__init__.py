"""nlflow: build executable workflows from natural-language requests."""

__version__ = "0.1.0"
