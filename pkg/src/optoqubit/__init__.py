"""Desk-scale simulation of qubit-read cavity optomechanics."""

__version__ = "0.1.0"
