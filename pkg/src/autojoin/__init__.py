"""Gradient-free robust steering regression via a jointly trained denoising autoencoder."""

__version__ = "0.1.0"
