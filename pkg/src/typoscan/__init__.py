"""Typosquatting pop-up scam measurement toolkit."""

__version__ = "0.1.0"
