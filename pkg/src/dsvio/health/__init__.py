"""Synthetic health-state tracking application."""
