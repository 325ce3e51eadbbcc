"""Latent diffusion: schedule, conditioning, training and guided sampling."""
