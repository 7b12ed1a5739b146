"""soas: semantic agent-based search broker."""

__version__ = "0.1.0"
