"""Test package for shiftreg."""
