"""Noise schedules and the closed-form forward process."""

import math
from dataclasses import dataclass
from typing import Literal

import torch

from aerial2ground.domain.config import DiffusionConfig
from aerial2ground.errors import ConfigError, ShapeError

ScheduleKind = Literal["linear", "cosine"]

_COSINE_OFFSET = 0.008
_MAX_BETA = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """β, α and ᾱ sequences, held in float64."""

    betas: torch.Tensor

    @property
    def timesteps(self) -> int:
        return int(self.betas.shape[0])

    @property
    def alphas(self) -> torch.Tensor:
        return 1.0 - self.betas

    @property
    def alpha_bar(self) -> torch.Tensor:
        return torch.cumprod(self.alphas, dim=0)

    def coefficient(self, values: torch.Tensor, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        """values[t] broadcast to `like`'s batch layout and dtype."""
        return values.to(like.device)[t.to(like.device)].to(like.dtype).reshape(-1, *([1] * (like.ndim - 1)))


def _check(betas: torch.Tensor, strict: bool) -> None:
    if betas.ndim != 1 or betas.shape[0] < 2:
        raise ConfigError("a schedule needs at least two timesteps")
    if not bool(((betas > 0) & (betas < 1)).all()):
        raise ConfigError("betas must lie strictly between 0 and 1")
    if not bool((betas[1:] >= betas[:-1]).all()):
        raise ConfigError("betas must be nondecreasing")
    if strict:
        alpha_bar = torch.cumprod(1.0 - betas, dim=0)
        if not alpha_bar[0] > 0.999:
            raise ConfigError(f"alpha_bar[0] = {alpha_bar[0].item():.6f} must exceed 0.999")
        if not alpha_bar[-1] < 0.01:
            raise ConfigError(f"alpha_bar[T-1] = {alpha_bar[-1].item():.6f} must be below 0.01")


def schedule_from_betas(betas: torch.Tensor | list[float], *, strict: bool = True) -> NoiseSchedule:
    """Wrap explicit betas; `strict=False` skips the endpoint checks on ᾱ."""
    b = torch.as_tensor(betas, dtype=torch.float64).clone()
    _check(b, strict)
    return NoiseSchedule(betas=b)


def make_schedule(
    kind: ScheduleKind = "linear",
    timesteps: int = 1000,
    *,
    beta_start: float = 1e-4,
    beta_end: float = 2e-2,
) -> NoiseSchedule:
    if timesteps < 2:
        raise ConfigError(f"timesteps must be at least 2, got {timesteps}")
    if kind == "linear":
        betas = torch.linspace(beta_start, beta_end, timesteps, dtype=torch.float64)
    elif kind == "cosine":
        steps = torch.arange(timesteps + 1, dtype=torch.float64) / timesteps
        f = torch.cos((steps + _COSINE_OFFSET) / (1 + _COSINE_OFFSET) * math.pi / 2) ** 2
        alpha_bar = f / f[0]
        betas = (1 - alpha_bar[1:] / alpha_bar[:-1]).clamp(max=_MAX_BETA)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    return schedule_from_betas(betas, strict=True)


def schedule_for(config: DiffusionConfig) -> NoiseSchedule:
    return make_schedule(
        config.schedule, config.timesteps, beta_start=config.beta_start, beta_end=config.beta_end
    )


def _as_timesteps(t: torch.Tensor | int, batch: int, sched: NoiseSchedule) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.long)
    if t.ndim == 0:
        t = t.expand(batch)
    if t.shape != (batch,):
        raise ShapeError(f"expected {batch} timesteps, got shape {tuple(t.shape)}")
    if bool((t < 0).any()) or bool((t >= sched.timesteps).any()):
        raise IndexError(f"timestep out of range [0, {sched.timesteps})")
    return t


def q_sample(z0: torch.Tensor, t: torch.Tensor | int, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """z_t = √ᾱ_t·z0 + √(1−ᾱ_t)·ε."""
    if z0.shape != eps.shape:
        raise ShapeError(f"z0 {tuple(z0.shape)} and eps {tuple(eps.shape)} differ")
    t = _as_timesteps(t, z0.shape[0], sched)
    alpha_bar = sched.alpha_bar
    return (
        sched.coefficient(alpha_bar.sqrt(), t, z0) * z0
        + sched.coefficient((1.0 - alpha_bar).sqrt(), t, z0) * eps
    )
