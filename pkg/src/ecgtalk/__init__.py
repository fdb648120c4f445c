"""Tool-calling agent runtime for multi-turn ECG dialogue."""

__version__ = "0.1.0"
