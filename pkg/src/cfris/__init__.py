"""WMMSE-based joint precoding, combining and multi-RIS design for cell-free MIMO-OFDM with IQ imbalance."""

__version__ = "0.1.0"
