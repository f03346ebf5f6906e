"""Latent-space and feature-space counterfactual generators with evaluation metrics."""

__version__ = "0.1.0"
