"""Closed-loop EEG affect engine: preprocessing, classification, streaming,
and a deterministic design-session protocol."""

__version__ = "0.1.0"
