"""Stacked multimodal ensemble for hate speech detection in text-embedded images."""

__version__ = "0.1.0"
