"""Preset tests."""
