"""Convolutional VAE family for 1 x 32 x 92 spectrogram windows.

All four variants share one encoder/decoder backbone::

    x [1, 32, 92]
      -> stride-2 conv 1->24, residual block      (stage 1, [24, 16, 46])
      -> stride-2 conv 24->48, residual block     (stage 2, [48, 8, 23])
      -> [attention blocks over 184 tokens of width 48]        attention, hybrid
      -> linear -> (mu, log_var) -> z -> linear -> [48, 8, 23]
      -> residual block [+ concat stage 2]                      skip, hybrid
      -> transposed conv 48->24
      -> residual block [+ concat stage 1]                      skip, hybrid
      -> transposed conv 24->12, conv 12->1, sigmoid

The architecture code only touches torch through this module; callers hand in
and get back numpy arrays via :mod:`pwave_vae.trainer`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

FAMILIES = ("basic", "skip", "attention", "hybrid")
EMBED_DIM = 48
FEATURE_SHAPE = (EMBED_DIM, 8, 23)
N_TOKENS = FEATURE_SHAPE[1] * FEATURE_SHAPE[2]  # 184
INPUT_SHAPE = (1, 32, 92)
HEAD_CHOICES = tuple(d for d in range(1, EMBED_DIM + 1) if EMBED_DIM % d == 0)


class DivergenceError(FloatingPointError):
    """Non-finite activations or loss; the training trial must be abandoned."""


@dataclass(frozen=True)
class ModelConfig:
    family: str = "basic"
    latent_dim: int = 128
    attn_depth: int = 1
    attn_heads: int = 4
    beta: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not 32 <= self.latent_dim <= 256:
            raise ValueError(f"latent_dim must lie in [32, 256], got {self.latent_dim}")
        if self.uses_attention:
            if not 1 <= self.attn_depth <= 48:
                raise ValueError(f"attn_depth must lie in [1, 48], got {self.attn_depth}")
            if self.attn_heads not in HEAD_CHOICES:
                raise ValueError(f"attn_heads must divide {EMBED_DIM}, got {self.attn_heads}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    @property
    def uses_attention(self) -> bool:
        return self.family in ("attention", "hybrid")

    @property
    def uses_skips(self) -> bool:
        return self.family in ("skip", "hybrid")

    def to_dict(self) -> dict:
        d = asdict(self)
        if not self.uses_attention:
            d.pop("attn_depth")
            d.pop("attn_heads")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        keys = {"family", "latent_dim", "attn_depth", "attn_heads", "beta"}
        return cls(**{k: v for k, v in d.items() if k in keys})


@dataclass
class LatentSample:
    mu: torch.Tensor
    log_var: torch.Tensor
    z: torch.Tensor


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with ReLU and a local shortcut."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.shortcut = nn.Identity() if in_ch == out_ch else nn.Conv2d(in_ch, out_ch, 1)

    def forward(self, x):
        h = F.relu(self.conv1(x))
        h = self.conv2(h)
        return F.relu(h + self.shortcut(x))


class AttentionBlock(nn.Module):
    """Pre-norm transformer block: self-attention then a 4x feed-forward."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.ff(self.norm2(x))


def _check(t: torch.Tensor, where: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise DivergenceError(f"non-finite values in {where}")
    return t


class VAE(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c1, c2 = 24, EMBED_DIM

        self.down1 = nn.Conv2d(1, c1, 3, stride=2, padding=1)
        self.enc1 = ResidualBlock(c1, c1)
        self.down2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.enc2 = ResidualBlock(c2, c2)

        if config.uses_attention:
            self.pos_embed = nn.Parameter(torch.zeros(1, N_TOKENS, EMBED_DIM))
            nn.init.normal_(self.pos_embed, std=0.02)
            self.blocks = nn.ModuleList(
                AttentionBlock(EMBED_DIM, config.attn_heads) for _ in range(config.attn_depth)
            )
            self.attn_norm = nn.LayerNorm(EMBED_DIM)

        flat = c2 * N_TOKENS
        self.to_latent = nn.Linear(flat, 2 * config.latent_dim)
        self.from_latent = nn.Linear(config.latent_dim, flat)

        skip = config.uses_skips
        self.dec2 = ResidualBlock(c2 * (2 if skip else 1), c2)
        self.up2 = nn.ConvTranspose2d(c2, c1, 4, stride=2, padding=1)
        self.dec1 = ResidualBlock(c1 * (2 if skip else 1), c1)
        self.up1 = nn.ConvTranspose2d(c1, 12, 4, stride=2, padding=1)
        self.head = nn.Conv2d(12, 1, 3, padding=1)

    @property
    def family(self) -> str:
        return self.config.family

    def encode(self, x: torch.Tensor):
        """x [B, 1, 32, 92] -> (features [B, 48, 8, 23], stage features)."""
        if tuple(x.shape[1:]) != INPUT_SHAPE:
            raise ValueError(f"expected input [B, {INPUT_SHAPE}], got {tuple(x.shape)}")
        s1 = self.enc1(F.relu(self.down1(x)))
        s2 = self.enc2(F.relu(self.down2(s1)))
        _check(s2, "encoder")
        stages = [s1, s2] if self.config.uses_skips else []
        return s2, stages

    def attend(self, feats: torch.Tensor) -> torch.Tensor:
        b = feats.shape[0]
        tokens = feats.flatten(2).transpose(1, 2) + self.pos_embed  # [B, 184, 48]
        for block in self.blocks:
            tokens = block(tokens)
        tokens = self.attn_norm(tokens)
        return tokens.transpose(1, 2).reshape(b, *FEATURE_SHAPE)

    def bottleneck(
        self,
        feats: torch.Tensor,
        sample: bool = True,
        generator: Optional[torch.Generator] = None,
    ):
        """Features -> (LatentSample, decoded features [B, 48, 8, 23]).

        With ``sample=False`` the latent is the posterior mean.
        """
        if tuple(feats.shape[1:]) != FEATURE_SHAPE:
            raise ValueError(f"expected features [B, {FEATURE_SHAPE}], got {tuple(feats.shape)}")
        if self.config.uses_attention:
            feats = _check(self.attend(feats), "attention bottleneck")
        stats = self.to_latent(feats.flatten(1))
        mu, log_var = stats.chunk(2, dim=1)
        if sample:
            eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
            z = mu + torch.exp(0.5 * log_var) * eps
        else:
            z = mu
        decoded = self.from_latent(z).view(-1, *FEATURE_SHAPE)
        return LatentSample(mu, log_var, z), decoded

    def decode(self, decoded: torch.Tensor, stages=()) -> torch.Tensor:
        if self.config.uses_skips:
            if len(stages) != 2:
                raise ValueError(f"{self.family} decoder needs 2 encoder stage features")
            s1, s2 = stages
            if s2.shape != decoded.shape:
                raise ValueError("stage-2 skip features do not match decoder input")
            h = self.dec2(torch.cat([decoded, s2], dim=1))
            h = F.relu(self.up2(h))
            h = self.dec1(torch.cat([h, s1], dim=1))
        else:
            h = self.dec2(decoded)
            h = F.relu(self.up2(h))
            h = self.dec1(h)
        h = F.relu(self.up1(h))
        return torch.sigmoid(self.head(h))

    def forward(self, x, sample: bool = True, generator=None):
        feats, stages = self.encode(x)
        latent, decoded = self.bottleneck(feats, sample=sample, generator=generator)
        return self.decode(decoded, stages), latent


def kl_divergence(mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, exp(log_var)) || N(0, I)), summed over latent dims, batch mean."""
    # expm1 avoids the cancellation in exp(lv) - 1 - lv for small lv
    per = 0.5 * (torch.expm1(log_var) - log_var + mu**2)
    return per.reshape(per.shape[0], -1).sum(dim=1).mean()


def vae_loss(x, x_hat, latent: LatentSample, beta: float = 1.0):
    """(total, rec, kl) with rec the pixel-mean squared error."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    rec = F.mse_loss(x_hat, x)
    kl = kl_divergence(latent.mu, latent.log_var)
    total = rec + beta * kl
    if not torch.isfinite(total):
        raise DivergenceError(f"non-finite loss (rec={rec.item()}, kl={kl.item()})")
    return total, rec, kl


def build_model(config: ModelConfig, seed: Optional[int] = None) -> VAE:
    if seed is not None:
        torch.manual_seed(seed)
    return VAE(config)
