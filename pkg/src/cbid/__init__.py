"""Payload attribution over digested network traffic."""

__version__ = "0.1.0"
