"""Deterministic collapse dynamics driven by smoothed Bohmian densities."""
