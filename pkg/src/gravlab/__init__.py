"""gravlab: numerical laboratory for self-gravitating wave-packet dynamics."""

__version__ = "0.1.0"
