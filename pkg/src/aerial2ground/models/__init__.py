"""Networks: latent codec, semantic encoder, denoiser and the pinned metric classifier."""
