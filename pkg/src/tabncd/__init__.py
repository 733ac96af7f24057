"""Novel class discovery for tabular data."""

__version__ = "0.1.0"
