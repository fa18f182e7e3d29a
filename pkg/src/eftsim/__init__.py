"""Simulator for error-free transmission of polarization qubits over noisy
channels using time-bin encoding, arrival-time post-selection and phase
feedback."""

__version__ = "0.1.0"
