"""hp-adaptive direct transcription of parabolic PDE-constrained optimal control."""
__version__ = "0.1.0"
