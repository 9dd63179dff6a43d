"""Interaction labeling and device-type classification for encrypted Matter traffic."""

__version__ = "0.1.0"
