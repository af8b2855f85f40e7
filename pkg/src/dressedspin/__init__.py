"""Driven spin-1 simulator for dressed-state qubits in kh divacancies."""

__version__ = "0.1.0"
