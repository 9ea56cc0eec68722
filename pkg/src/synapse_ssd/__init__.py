"""Receptor-saturation state-space model of a synaptic diffusion channel."""
