"""Objective tests."""
