"""Age and leaky-memory structured neural population models."""
__version__ = "0.1.0"
