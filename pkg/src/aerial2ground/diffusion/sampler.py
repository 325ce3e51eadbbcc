"""
Guided sampling of ground views from aerial views and their height maps.

`steps == T` runs DDPM ancestral updates; fewer steps run deterministic
DDIM over evenly strided timesteps. Each sample draws its starting noise
(and DDPM noise) from its own generator, so an image depends only on its
inputs and its seed, never on what else shares the batch.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np
import torch

from aerial2ground.diffusion.conditioning import (
    ConditioningBundle,
    assemble,
    encode_conditions,
    null_bundle,
    predict_noise,
)
from aerial2ground.diffusion.schedule import NoiseSchedule
from aerial2ground.domain.samples import PairedSample
from aerial2ground.errors import ConfigError, DataError, ShapeError
from aerial2ground.models.codec import LatentCodec
from aerial2ground.models.semantic import SemanticEncoder
from aerial2ground.models.tensors import heights_to_tensor, images_to_tensor, tensor_to_images
from aerial2ground.models.unet import ConditionalUNet
from aerial2ground.scene.render import perturb_height

logger = logging.getLogger(__name__)

DEFAULT_GUIDANCE = 2.0

_NOISE_STREAM = 0
_HEIGHT_STREAM = 1


def derive_seed(seed: int, index: int, stream: int = _NOISE_STREAM) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(index, stream)).generate_state(1)[0])


def cfg_predict(
    model: ConditionalUNet,
    bundle_cond: ConditioningBundle,
    bundle_null: ConditioningBundle,
    s: float,
) -> torch.Tensor:
    """ε_u + s·(ε_c − ε_u); s = 1 and s = 0 return the branch prediction itself."""
    if bundle_cond.z_t.shape != bundle_null.z_t.shape:
        raise ShapeError("conditional and null bundles must share the latent shape")
    if s == 1.0:
        return predict_noise(model, bundle_cond)
    if s == 0.0:
        return predict_noise(model, bundle_null)
    eps_c = predict_noise(model, bundle_cond)
    eps_u = predict_noise(model, bundle_null)
    return eps_u + s * (eps_c - eps_u)


def timestep_plan(sched: NoiseSchedule, steps: int) -> list[int]:
    """Descending timesteps visited by the sampler."""
    T = sched.timesteps
    if steps < 1 or steps > T:
        raise ConfigError(f"steps must lie in [1, {T}], got {steps}")
    if steps == T:
        return list(range(T - 1, -1, -1))
    # Anchored at T − 1 so every plan starts from pure noise.
    ts = np.unique(np.round(np.linspace(T - 1, 0, steps)).astype(np.int64))
    return [int(t) for t in ts[::-1]]


def _noise(
    generators: list[torch.Generator], shape: tuple[int, ...], dtype: torch.dtype, device: torch.device
) -> torch.Tensor:
    return torch.stack([torch.randn(shape, generator=g, dtype=dtype) for g in generators]).to(device)


@torch.no_grad()
def sample_latents(
    model: ConditionalUNet,
    sched: NoiseSchedule,
    v_x: torch.Tensor | None,
    v_h: torch.Tensor | None,
    c_x: torch.Tensor | None,
    latent_shape: tuple[int, int, int],
    seeds: list[int],
    *,
    scale: float = DEFAULT_GUIDANCE,
    steps: int = 50,
) -> torch.Tensor:
    """Denoise from z_T ~ N(0, I) to a z_0 estimate for each seed."""
    if not seeds:
        raise DataError("no samples to generate")
    plan = timestep_plan(sched, steps)
    ddpm = len(plan) == sched.timesteps
    device = next(model.parameters()).device
    dtype = next(model.parameters()).dtype
    generators = [torch.Generator().manual_seed(s) for s in seeds]
    z = _noise(generators, latent_shape, dtype, device)

    alpha_bar = sched.alpha_bar
    t0 = torch.zeros(len(seeds), dtype=torch.long, device=device)
    cond = assemble(v_x, v_h, c_x, z, t0, null_tokens=None)
    uncond = null_bundle(cond, model)
    model.eval()
    for i, step in enumerate(plan):
        t = torch.full((len(seeds),), step, dtype=torch.long, device=device)
        eps = cfg_predict(model, cond.with_latent(z, t), uncond.with_latent(z, t), scale)
        ab_t = alpha_bar[step].item()
        if ddpm:
            beta_t = sched.betas[step].item()
            mean = (z - beta_t / (1.0 - ab_t) ** 0.5 * eps) / (1.0 - beta_t) ** 0.5
            if step > 0:
                var = beta_t * (1.0 - alpha_bar[step - 1].item()) / (1.0 - ab_t)
                z = mean + var**0.5 * _noise(generators, latent_shape, z.dtype, z.device)
            else:
                z = mean
        else:
            ab_prev = alpha_bar[plan[i + 1]].item() if i + 1 < len(plan) else 1.0
            x0 = (z - (1.0 - ab_t) ** 0.5 * eps) / ab_t**0.5
            z = ab_prev**0.5 * x0 + (1.0 - ab_prev) ** 0.5 * eps
    return z


@dataclass(frozen=True)
class GeneratedView:
    id: str
    pixels: np.ndarray  # H×W×3 in [0, 1]
    seconds: float


class Sampler:
    """Generates ground views for PairedSamples from frozen networks."""

    def __init__(
        self,
        model: ConditionalUNet,
        codec: LatentCodec,
        semantic: SemanticEncoder | None,
        sched: NoiseSchedule,
        ground_shape: tuple[int, int],
    ) -> None:
        self.model = model.eval()
        self.codec = codec.eval()
        self.semantic = semantic.eval() if semantic is not None else None
        self.sched = sched
        self.latent_size = codec.latent_shape(*ground_shape)

    @property
    def device(self) -> torch.device:
        return next(self.model.parameters()).device

    @torch.no_grad()
    def generate(
        self,
        samples: list[PairedSample],
        *,
        scale: float = DEFAULT_GUIDANCE,
        steps: int = 50,
        seed: int = 0,
        no_height: bool = False,
        height_noise_sigma: float = 0.0,
        batch_size: int = 16,
        offset: int = 0,
    ) -> list[GeneratedView]:
        """One image per sample; `offset` is the index of samples[0] in the full run."""
        if no_height and not self.model.config.use_height:
            logger.warning("no_height requested for a variant without height conditioning")
        out: list[GeneratedView] = []
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            indices = [offset + start + k for k in range(len(chunk))]
            heights = [
                perturb_height(s.height, height_noise_sigma, derive_seed(seed, i, _HEIGHT_STREAM))
                for s, i in zip(chunk, indices)
            ]
            began = time.perf_counter()
            v_x, v_h, c_x = encode_conditions(
                self.codec,
                self.semantic,
                images_to_tensor([s.aerial.pixels for s in chunk], self.device),
                heights_to_tensor(heights, self.device),
                self.latent_size,
                self.model.config,
                no_height=no_height,
            )
            z0 = sample_latents(
                self.model,
                self.sched,
                v_x,
                v_h,
                c_x,
                (self.codec.latent_channels, *self.latent_size),
                [derive_seed(seed, i) for i in indices],
                scale=scale,
                steps=steps,
            )
            latent_scale = self.codec.config.latent_scale
            images = tensor_to_images(self.codec.decode(z0 / latent_scale))
            per_image = (time.perf_counter() - began) / len(chunk)
            logger.info("Generated %d views in %.3f s each", len(chunk), per_image)
            out.extend(GeneratedView(s.id, img, per_image) for s, img in zip(chunk, images))
        return out
