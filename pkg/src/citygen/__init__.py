"""Structure-pinned multi-view scene synthesis with a two-city transfer benchmark."""

__version__ = "0.1.0"
