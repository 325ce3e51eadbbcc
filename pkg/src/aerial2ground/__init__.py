"""Height-aware, dual-conditioned latent diffusion for aerial-to-ground view synthesis."""

__version__ = "0.1.0"
