"""Bidirectional mapping between whole-body motion and natural language."""
__version__ = "0.1.0"
