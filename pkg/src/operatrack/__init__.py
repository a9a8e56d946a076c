"""Real-time opera tracking: music and lyrics online time warping against a reference."""

__version__ = "0.1.0"
