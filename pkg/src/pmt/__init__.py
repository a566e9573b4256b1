"""Desk-scale privacy minimization transformation."""
