"""Scenario preset files."""
