"""Cache package."""
