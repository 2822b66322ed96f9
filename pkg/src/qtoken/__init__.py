"""Quantum-token protocol simulator."""
