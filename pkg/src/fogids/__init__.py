"""Two-stage ensemble intrusion detection for fog-to-things networks."""

__version__ = "0.1.0"
