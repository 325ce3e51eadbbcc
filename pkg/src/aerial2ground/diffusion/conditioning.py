"""
The conditioning bundle: aerial latent, height latent, semantic tokens, noisy latent, timestep.

Spatial conditions are channel-concatenated with z_t; the semantic tokens
are the cross-attention context. Dropped spatial slots become zero grids,
a dropped semantic slot becomes the denoiser's learned null tokens. Slots
a variant does not use are None throughout.
"""

from dataclasses import dataclass

import torch

from aerial2ground.domain.config import DenoiserConfig
from aerial2ground.errors import ConfigError, ShapeError
from aerial2ground.models.codec import LatentCodec, align_latent
from aerial2ground.models.semantic import SemanticEncoder
from aerial2ground.models.unet import ConditionalUNet

Mask = torch.Tensor | bool


@dataclass(frozen=True)
class ConditioningBundle:
    z_t: torch.Tensor
    t: torch.Tensor
    v_x: torch.Tensor | None
    v_h: torch.Tensor | None
    c_x: torch.Tensor | None
    null_spatial: torch.Tensor  # B bools
    null_semantic: torch.Tensor  # B bools

    def denoiser_input(self) -> torch.Tensor:
        parts = [self.z_t] + [v for v in (self.v_x, self.v_h) if v is not None]
        return torch.cat(parts, dim=1)

    def with_latent(self, z_t: torch.Tensor, t: torch.Tensor) -> "ConditioningBundle":
        if z_t.shape != self.z_t.shape:
            raise ShapeError(f"latent {tuple(z_t.shape)} does not match bundle {tuple(self.z_t.shape)}")
        return ConditioningBundle(z_t, t, self.v_x, self.v_h, self.c_x, self.null_spatial, self.null_semantic)


def _mask(flag: Mask, batch: int, device: torch.device) -> torch.Tensor:
    m = torch.as_tensor(flag, dtype=torch.bool, device=device)
    if m.ndim == 0:
        m = m.expand(batch)
    if m.shape != (batch,):
        raise ShapeError(f"drop mask must have {batch} entries, got {tuple(m.shape)}")
    return m


def assemble(
    v_x: torch.Tensor | None,
    v_h: torch.Tensor | None,
    c_x: torch.Tensor | None,
    z_t: torch.Tensor,
    t: torch.Tensor,
    drop_spatial: Mask = False,
    drop_semantic: Mask = False,
    *,
    null_tokens: torch.Tensor | None = None,
) -> ConditioningBundle:
    """Build a bundle, substituting nulls wherever the drop masks are set."""
    batch = z_t.shape[0]
    spatial = _mask(drop_spatial, batch, z_t.device)
    semantic = _mask(drop_semantic, batch, z_t.device)
    for name, v in (("v_x", v_x), ("v_h", v_h)):
        if v is not None and v.shape != z_t.shape:
            raise ShapeError(f"{name} {tuple(v.shape)} must match z_t {tuple(z_t.shape)}")
    if v_h is not None and v_x is None:
        raise ConfigError("height conditioning requires the aerial latent")

    keep = (~spatial).to(z_t.dtype).reshape(-1, 1, 1, 1)
    v_x = v_x * keep if v_x is not None else None
    v_h = v_h * keep if v_h is not None else None

    if c_x is not None and bool(semantic.any()):
        if null_tokens is None:
            raise ConfigError("dropping the semantic condition needs null tokens")
        if null_tokens.shape[-2:] != c_x.shape[-2:]:
            raise ShapeError(f"null tokens {tuple(null_tokens.shape)} do not match {tuple(c_x.shape)}")
        null = null_tokens.to(c_x.dtype).expand(batch, -1, -1)
        c_x = torch.where(semantic.reshape(-1, 1, 1), null, c_x)
    return ConditioningBundle(z_t, t, v_x, v_h, c_x, spatial, semantic)


def null_bundle(bundle: ConditioningBundle, model: ConditionalUNet) -> ConditioningBundle:
    """The fully dropped counterpart of `bundle`."""
    null = model.null_tokens.tokens if model.null_tokens is not None else None
    return assemble(bundle.v_x, bundle.v_h, bundle.c_x, bundle.z_t, bundle.t, True, True, null_tokens=null)


def predict_noise(model: ConditionalUNet, bundle: ConditioningBundle) -> torch.Tensor:
    return model(bundle.denoiser_input(), bundle.t, bundle.c_x)


@torch.no_grad()
def encode_conditions(
    codec: LatentCodec,
    semantic: SemanticEncoder | None,
    aerial: torch.Tensor,
    heights: torch.Tensor,
    latent_size: tuple[int, int],
    variant: DenoiserConfig,
    *,
    no_height: bool = False,
) -> tuple[torch.Tensor | None, torch.Tensor | None, torch.Tensor | None]:
    """Posterior-mean aerial and height latents on the target grid, plus aerial semantic tokens.

    `no_height` keeps the height slot but fills it with zeros.
    """
    v_x = v_h = c_x = None
    if variant.use_vae_cond:
        v_x = align_latent(codec.encode(aerial).mean, latent_size)
        if variant.use_height:
            v_h = align_latent(codec.encode_height(heights).mean, latent_size)
            if no_height:
                v_h = torch.zeros_like(v_h)
    if variant.use_clip:
        if semantic is None:
            raise ConfigError("this variant needs the semantic encoder")
        c_x = semantic.embed(aerial, "aerial").tokens
    return v_x, v_h, c_x
