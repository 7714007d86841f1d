"""Planar normalizing flows in a variational autoencoder, trained with a small reverse-mode engine."""

__version__ = "0.1.0"
