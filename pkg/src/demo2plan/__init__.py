"""Turn one human pick-and-place demonstration into an executable robot plan."""

__version__ = "0.1.0"
