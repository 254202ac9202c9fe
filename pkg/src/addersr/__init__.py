"""Adder-network super-resolution at desk scale."""
