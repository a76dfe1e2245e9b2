"""Disentangled-IB guided privacy-protective JSCC over an AWGN wiretap channel."""

__version__ = "0.1.0"
