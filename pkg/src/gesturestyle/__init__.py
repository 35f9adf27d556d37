"""Multimodal gesture style transfer with adversarial style/content disentanglement."""

__version__ = "0.1.0"
