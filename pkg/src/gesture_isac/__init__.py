"""Gesture-aware indoor THz ISAC simulation and resource allocation."""
