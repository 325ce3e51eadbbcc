"""
Noise predictor: a U-shaped network over the concatenated latents.

Input channels are z_t plus whichever spatial conditions the variant uses
(aerial and height latents); semantic tokens enter through cross-attention at the
configured levels; timesteps through sinusoidal features added to every
residual block.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from aerial2ground.domain.config import DenoiserConfig
from aerial2ground.errors import ShapeError
from aerial2ground.models.layers import Downsample, ResBlock, Upsample, group_norm, timestep_embedding
from aerial2ground.models.semantic import NullEmbedding


class CrossAttention(nn.Module):
    """Feature-map queries attending over a token context, with a residual."""

    def __init__(self, channels: int, context_dim: int, heads: int) -> None:
        super().__init__()
        if channels % heads:
            raise ShapeError(f"{channels} channels cannot be split over {heads} heads")
        self.heads = heads
        self.norm = group_norm(channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(context_dim, channels, bias=False)
        self.to_v = nn.Linear(context_dim, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        q = self.to_q(self.norm(x).flatten(2).transpose(1, 2))
        k, v = self.to_k(context), self.to_v(context)

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.reshape(b, t.shape[1], self.heads, c // self.heads).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        attn = torch.softmax(q @ k.transpose(-2, -1) * (c // self.heads) ** -0.5, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, h * w, c)
        return x + self.to_out(out).transpose(1, 2).reshape(b, c, h, w)


class _Level(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int, attention: CrossAttention | None) -> None:
        super().__init__()
        self.res = ResBlock(in_ch, out_ch, time_dim)
        self.attn = attention

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor, context: torch.Tensor | None) -> torch.Tensor:
        x = self.res(x, t_emb)
        if self.attn is not None and context is not None:
            x = self.attn(x, context)
        return x


class ConditionalUNet(nn.Module):
    def __init__(self, config: DenoiserConfig, latent_channels: int, tokens: int, token_width: int) -> None:
        super().__init__()
        self.config = config
        self.latent_channels = latent_channels
        self.in_channels = latent_channels + config.conditioning_channels(latent_channels)
        base = config.base_channels
        time_dim = base * 4
        self.time_mlp = nn.Sequential(nn.Linear(base, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim))
        self.null_tokens = NullEmbedding(tokens, token_width) if config.use_clip else None

        def attention(level: int, ch: int) -> CrossAttention | None:
            if config.use_clip and level in config.attention_levels:
                return CrossAttention(ch, token_width, config.heads)
            return None

        widths = [base * m for m in config.channel_mult]
        self.conv_in = nn.Conv2d(self.in_channels, base, kernel_size=3, padding=1)
        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        ch = base
        for i, width in enumerate(widths):
            self.down.append(_Level(ch, width, time_dim, attention(i, width)))
            ch = width
            self.downsample.append(Downsample(ch) if i < len(widths) - 1 else nn.Identity())

        deepest = len(widths) - 1
        self.mid1 = _Level(ch, ch, time_dim, attention(deepest, ch))
        self.mid2 = _Level(ch, ch, time_dim, None)

        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for i in reversed(range(len(widths))):
            width = widths[i]
            self.up.append(_Level(ch + width, width, time_dim, attention(i, width)))
            ch = width
            self.upsample.append(Upsample(ch) if i > 0 else nn.Identity())

        self.norm_out = group_norm(ch)
        self.conv_out = nn.Conv2d(ch, latent_channels, kernel_size=3, padding=1)
        if config.zero_init_out:
            nn.init.zeros_(self.conv_out.weight)
            nn.init.zeros_(self.conv_out.bias)

    @property
    def downsampling(self) -> int:
        return 2 ** (len(self.config.channel_mult) - 1)

    def forward(self, x: torch.Tensor, t: torch.Tensor, context: torch.Tensor | None = None) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"denoiser expects B×{self.in_channels}×h×w input, got {tuple(x.shape)}")
        if x.shape[2] % self.downsampling or x.shape[3] % self.downsampling:
            raise ShapeError(f"latent size {tuple(x.shape[2:])} is not divisible by {self.downsampling}")
        if self.config.use_clip and context is None:
            raise ShapeError("this denoiser variant requires a token context")

        t_emb = self.time_mlp(timestep_embedding(t, self.config.base_channels).to(x.dtype))
        h = self.conv_in(x)
        skips = []
        for level, down in zip(self.down, self.downsample):
            h = level(h, t_emb, context)
            skips.append(h)
            h = down(h)
        h = self.mid2(self.mid1(h, t_emb, context), t_emb, None)
        for level, up in zip(self.up, self.upsample):
            h = level(torch.cat([h, skips.pop()], dim=1), t_emb, context)
            h = up(h)
        return self.conv_out(F.silu(self.norm_out(h)))
