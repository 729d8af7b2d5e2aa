"""Joint cache placement and rate control in cache networks."""

__version__ = "0.1.0"
