"""Simulated decoy-state BB84 attack dataset and a hybrid quantum LSTM classifier."""

__version__ = "0.1.0"
