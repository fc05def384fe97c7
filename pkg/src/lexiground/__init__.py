"""Interactive visually grounded word learning."""

__version__ = "0.1.0"
