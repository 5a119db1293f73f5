"""Splicing localization for overhead imagery with a ViT reconstruction autoencoder."""
__version__ = "0.1.0"
