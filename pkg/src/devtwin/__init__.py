"""Few-shot meta-learned digital twins for schema-described HTTP devices."""
__version__ = "0.1.0"
