"""Patch-attention encoder and field decoder.

The encoder lifts a multichannel snapshot (physical channels, region mask,
harmonic coordinate features) into a d-dimensional latent observable: the
snapshot is cut into non-overlapping patches, linearly embedded, tagged
with learned positional embeddings, and run through pre-norm self-attention
blocks; the class token is the latent state.

The decoder inverts the lift: a linear map from the latent back to patch
space, reassembled to the grid, then a small convolutional refinement with
a residual skip. Decoded channels are masked to their home subdomains.

Everything runs in float64 so gradient checks and exponential identities
hold at tight tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError
from .fields import TrajectoryDataset, unit_coords
from .generators import BlockDiagGenerator, DenseStableGenerator, ForcingHead

GENERATOR_MODES = ("dissipative", "conservative", "dense", "forced")
N_PHYS_CHANNELS = 4


@dataclass(frozen=True)
class EncoderConfig:
    patch_size: int = 16
    embed_dim: int = 192
    depth: int = 6
    heads: int = 6
    latent_dim: int = 192
    harmonic_freqs: int = 4

    @property
    def channels_in(self) -> int:
        # physical channels + mask + harmonic coordinate features
        return N_PHYS_CHANNELS + 1 + harmonic_width(self.harmonic_freqs)

    def validate(self, grid_h: int, grid_w: int):
        if grid_h % self.patch_size or grid_w % self.patch_size:
            raise ConfigError(
                f"grid {grid_h}x{grid_w} not divisible by patch size {self.patch_size}")
        if self.embed_dim % self.heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by {self.heads} heads")
        if self.latent_dim % 2:
            raise ConfigError(f"latent_dim must be even, got {self.latent_dim}")

    def n_patches(self, grid_h: int, grid_w: int) -> int:
        return (grid_h // self.patch_size) * (grid_w // self.patch_size)


def harmonic_width(harmonic_freqs: int) -> int:
    return 4 * harmonic_freqs + 2


def harmonic_embed(coords: np.ndarray, harmonic_freqs: int) -> np.ndarray:
    """Octave sin/cos features of unit-square coordinates.

    coords is [H, W, 2] in [0, 1]^2; output is [H, W, 4*harmonic_freqs + 2]:
    the raw coordinates followed by sin/cos of 2^j*pi*x and 2^j*pi*y.
    """
    feats = [coords[..., 0], coords[..., 1]]
    for j in range(harmonic_freqs):
        w = (2.0**j) * np.pi
        feats += [
            np.sin(w * coords[..., 0]), np.cos(w * coords[..., 0]),
            np.sin(w * coords[..., 1]), np.cos(w * coords[..., 1]),
        ]
    return np.stack(feats, axis=-1)


def assemble_inputs(ds: TrajectoryDataset, cfg: EncoderConfig) -> torch.Tensor:
    """Stack [T, C_in, H, W] encoder inputs: fields + mask + harmonics."""
    T = len(ds)
    harm = harmonic_embed(unit_coords(ds.domain), cfg.harmonic_freqs)
    static = np.concatenate(
        [ds.domain.mask[None], np.moveaxis(harm, -1, 0)], axis=0)
    static = np.broadcast_to(static, (T,) + static.shape)
    return torch.as_tensor(
        np.concatenate([ds.data, static], axis=1), dtype=torch.float64)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, return_attn: bool = False):
        B, N, D = x.shape
        qkv = self.qkv(x).reshape(B, N, 3, self.heads, D // self.heads)
        q, k, v = (qkv[:, :, i].transpose(1, 2) for i in range(3))  # B h N hd
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, N, D)
        out = self.proj(out)
        return (out, attn) if return_attn else out


class TransformerBlock(nn.Module):
    """Pre-norm block: attention then feed-forward, both residual."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))

    def forward(self, x):
        x = self.attn(self.norm1(x)) + x
        return self.ffn(self.norm2(x)) + x


class PatchEncoder(nn.Module):
    """Lifting map: snapshot -> latent observable (class-token readout)."""

    def __init__(self, cfg: EncoderConfig, grid_h: int, grid_w: int):
        super().__init__()
        cfg.validate(grid_h, grid_w)
        self.cfg = cfg
        n = cfg.n_patches(grid_h, grid_w)
        self.patch = nn.Conv2d(cfg.channels_in, cfg.embed_dim,
                               kernel_size=cfg.patch_size, stride=cfg.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.embed_dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, n + 1, cfg.embed_dim))
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.embed_dim, cfg.heads) for _ in range(cfg.depth))
        if cfg.latent_dim != cfg.embed_dim:
            self.head = nn.Linear(cfg.embed_dim, cfg.latent_dim)
        else:
            self.head = nn.Identity()
        self.to(torch.float64)
        self.apply(_init_weights)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def tokens(self, x: torch.Tensor) -> torch.Tensor:
        """[B, C, H, W] -> [B, N+1, D] embedded token sequence."""
        if x.shape[1] != self.cfg.channels_in:
            raise ConfigError(
                f"expected {self.cfg.channels_in} input channels, got {x.shape[1]}")
        z = self.patch(x).flatten(2).transpose(1, 2)
        cls = self.cls_token.expand(z.shape[0], -1, -1)
        return torch.cat([cls, z], dim=1) + self.pos_embed

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.tokens(x)
        for blk in self.blocks:
            z = blk(z)
        return self.head(z[:, 0])


class FieldDecoder(nn.Module):
    """Reconstruction map: latent -> masked physical fields on the grid."""

    def __init__(self, cfg: EncoderConfig, grid_h: int, grid_w: int,
                 mask: np.ndarray, refine_width: int = 32):
        super().__init__()
        cfg.validate(grid_h, grid_w)
        self.grid = (grid_h, grid_w)
        self.patch_size = cfg.patch_size
        n = cfg.n_patches(grid_h, grid_w)
        self.proj = nn.Linear(
            cfg.latent_dim, n * cfg.patch_size**2 * N_PHYS_CHANNELS)
        self.refine = nn.Sequential(
            nn.Conv2d(N_PHYS_CHANNELS, refine_width, 3, padding=1),
            nn.GELU(),
            nn.Conv2d(refine_width, N_PHYS_CHANNELS, 3, padding=1),
        )
        self.to(torch.float64)
        self.apply(_init_weights)
        # zero-initialized refinement: starts as the identity on the coarse map
        nn.init.zeros_(self.refine[-1].weight)
        nn.init.zeros_(self.refine[-1].bias)
        free = torch.as_tensor(mask > 0.5, dtype=torch.float64)
        homes = torch.stack([free, free, free, 1.0 - free])
        self.register_buffer("home_mask", homes.unsqueeze(0))

    def forward(self, g: torch.Tensor) -> torch.Tensor:
        squeeze = g.ndim == 1
        g = g.reshape(-1, g.shape[-1])
        H, W = self.grid
        P = self.patch_size
        x = self.proj(g).reshape(-1, H // P, W // P, P, P, N_PHYS_CHANNELS)
        x = x.permute(0, 5, 1, 3, 2, 4).reshape(-1, N_PHYS_CHANNELS, H, W)
        x = (x + self.refine(x)) * self.home_mask
        return x[0] if squeeze else x


def _init_weights(m):
    if isinstance(m, (nn.Linear, nn.Conv2d)):
        nn.init.trunc_normal_(m.weight, std=0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)


class FlowModel(nn.Module):
    """Encoder + latent generator (+ optional forcing head) + decoder."""

    def __init__(self, cfg: EncoderConfig, grid_h: int, grid_w: int,
                 mask: np.ndarray, generator_mode: str,
                 forcing_freq: float | None = None):
        super().__init__()
        if generator_mode not in GENERATOR_MODES:
            raise ConfigError(f"unknown generator mode {generator_mode!r}")
        self.cfg = cfg
        self.generator_mode = generator_mode
        self.encoder = PatchEncoder(cfg, grid_h, grid_w)
        self.decoder = FieldDecoder(cfg, grid_h, grid_w, mask)
        d = cfg.latent_dim
        if generator_mode == "conservative":
            self.generator = BlockDiagGenerator.conservative(d)
        elif generator_mode == "dense":
            rng = np.random.default_rng(0)
            self.generator = DenseStableGenerator(
                d, tri=0.1 * np.eye(d) + 0.02 * rng.standard_normal((d, d)),
                skew=0.1 * rng.standard_normal((d, d)))
        else:
            self.generator = BlockDiagGenerator.dissipative(d)
        if generator_mode == "forced":
            if forcing_freq is None:
                raise ConfigError("forced generator mode needs a forcing frequency")
            self.forcing = ForcingHead(d, forcing_freq)
        else:
            self.forcing = None

    def latent_rollout(self, g0: torch.Tensor, times, t0: float, dt: float,
                       mode: str = "direct") -> torch.Tensor:
        """Evolve one latent to each requested time; [T, d] output.

        Direct mode applies exp(A*(t - t0)) in one shot per target; the
        recursive mode steps with exp(A*dt), so times must sit on the dt
        grid. The forced contribution, when present, depends only on the
        target time.
        """
        times = torch.as_tensor(np.asarray(times, dtype=float))
        taus = times - t0
        if torch.any(taus < -1e-12):
            raise ValueError("rollout times must not precede the anchor time t0")
        if mode == "direct":
            nat = self.generator.evolve(g0, taus.clamp(min=0.0))
        elif mode == "recursive":
            steps = taus / dt
            rounded = torch.round(steps)
            if torch.any(torch.abs(steps - rounded) > 1e-6):
                raise ValueError(
                    "recursive rollout needs times on the dt grid")
            n_max = int(rounded.max().item())
            states = [g0]
            g = g0
            for _ in range(n_max):
                g = self.generator.evolve(g, dt)
                states.append(g)
            nat = torch.stack([states[int(k)] for k in rounded.tolist()])
        else:
            raise ConfigError(f"unknown rollout mode {mode!r}")
        if self.forcing is not None:
            nat = nat + self.forcing(times)
        return nat

    def predict(self, x0: torch.Tensor, times, t0: float, dt: float,
                mode: str = "direct") -> torch.Tensor:
        """Encode the anchor snapshot, evolve, decode: [T, 4, H, W]."""
        g0 = self.encoder(x0.unsqueeze(0))[0]
        return self.decoder(self.latent_rollout(g0, times, t0, dt, mode))


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
