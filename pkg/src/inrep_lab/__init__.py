"""Conditioning a frozen unconditional generator through its inputs, at toy scale."""

__version__ = "0.1.0"
