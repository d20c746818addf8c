"""Maintenance scripts for HybridTrap presets."""
