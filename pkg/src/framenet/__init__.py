"""FrameNet operator learning between truncated Hilbert spaces."""

__version__ = "0.1.0"
