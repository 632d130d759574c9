"""CLI interface modules."""
