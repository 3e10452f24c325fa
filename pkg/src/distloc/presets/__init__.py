"""Packaged scenario presets (JSON)."""
