"""Velocity network over the fixed 7-frame latent sequence.

The sequence layout is [blank, q_t, view1, view2, view3, q_future, value];
the first five frames are clean conditioning, the last two are the noisy
targets. Each frame is patchified into per-cell tokens, tagged with
learned cell-position and frame-index embeddings plus a sinusoidal
flow-time embedding (conditioning frames carry time 0, target frames the
sampled time), and processed by bidirectional transformer blocks with a
linear per-token output head. The network predicts the constant velocity
from clean data to noise for every frame; only the two target frames are
read by the loss and the sampler.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import LatentCodec, NormalizationSpec
from .episodes import JointObservation, Proprioception

SEQ_LEN = 7
TARGET_INDICES = (5, 6)
TARGET_MASK = (False, False, False, False, False, True, True)


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    width: int = 128
    heads: int = 4
    latent_h: int = 8
    latent_w: int = 8
    latent_c: int = 4
    d_q: int = 3
    horizon: int = 50
    img_h: int = 32
    img_w: int = 32
    image_seed: int = 0
    token_patch: int = 1

    def __post_init__(self) -> None:
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.width % 2:
            raise ValueError("width must be even for the sinusoidal time embedding")
        if self.latent_h % self.token_patch or self.latent_w % self.token_patch:
            raise ValueError(
                f"latent grid ({self.latent_h}, {self.latent_w}) not divisible by "
                f"token_patch {self.token_patch}"
            )
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return (self.latent_h, self.latent_w, self.latent_c)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def build_codec(self, spec: NormalizationSpec) -> LatentCodec:
        return LatentCodec(
            self.latent_h,
            self.latent_w,
            self.latent_c,
            spec,
            image_hw=(self.img_h, self.img_w),
            image_seed=self.image_seed,
        )


@dataclass
class LatentSequence:
    """The 7-frame block fed to the model, frames stacked (7, h, w, c)."""

    frames: np.ndarray

    def __post_init__(self) -> None:
        if self.frames.ndim != 4 or self.frames.shape[0] != SEQ_LEN:
            raise ValueError(f"expected ({SEQ_LEN}, h, w, c) frames, got {self.frames.shape}")
        self.frames = self.frames.astype(np.float32)

    @property
    def target_mask(self) -> tuple[bool, ...]:
        return TARGET_MASK


def assemble_sequence(
    x_t: JointObservation,
    codec: LatentCodec,
    q_future: Proprioception | None = None,
    G_t: float | None = None,
    rng: np.random.Generator | None = None,
) -> LatentSequence:
    """Build the 7-frame sequence for one observation.

    With both targets given (training) all frames are clean; with both
    absent (inference) the two target slots are filled with standard
    Gaussian noise drawn from ``rng`` (future-proprio frame first).
    """
    if (q_future is None) != (G_t is None):
        raise ValueError("q_future and G_t must be both present (training) or both absent")
    frames = np.empty((SEQ_LEN, *codec.frame_shape), dtype=np.float32)
    frames[0] = codec.blank_frame()
    frames[1] = codec.encode_proprio(x_t.proprio)
    for k in range(3):
        frames[2 + k] = codec.encode_image(x_t.obs.views[k])
    if q_future is not None:
        frames[5] = codec.encode_proprio(q_future)
        frames[6] = codec.encode_value(G_t)
    else:
        if rng is None:
            raise ValueError("inference-mode assembly needs an rng for the noise frames")
        frames[5:7] = rng.standard_normal((2, *codec.frame_shape)).astype(np.float32)
    return LatentSequence(frames=frames)


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos features of t (flow time scaled by 1000)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half
    )
    args = t.unsqueeze(-1) * 1000.0 * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class _Block(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.ln2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, T, W = x.shape
        d = W // self.heads
        qkv = self.qkv(self.ln1(x)).reshape(B, T, 3, self.heads, d).permute(2, 0, 3, 1, 4)
        y = F.scaled_dot_product_attention(qkv[0], qkv[1], qkv[2])
        x = x + self.proj(y.transpose(1, 2).reshape(B, T, W))
        return x + self.mlp(self.ln2(x))


class VelocityModel(nn.Module):
    """Predicts per-frame flow velocities for a batch of 7-frame sequences."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        tp = config.token_patch
        self.grid = (config.latent_h // tp, config.latent_w // tp)
        self.n_cells = self.grid[0] * self.grid[1]
        self.token_dim = config.latent_c * tp * tp

        self.token_in = nn.Linear(self.token_dim, config.width)
        self.pos_emb = nn.Parameter(torch.empty(self.n_cells, config.width).normal_(0, 0.02))
        self.frame_emb = nn.Parameter(torch.empty(SEQ_LEN, config.width).normal_(0, 0.02))
        self.time_mlp = nn.Sequential(
            nn.Linear(config.width, config.width),
            nn.SiLU(),
            nn.Linear(config.width, config.width),
        )
        self.blocks = nn.ModuleList(
            [_Block(config.width, config.heads) for _ in range(config.n_layers)]
        )
        self.ln_out = nn.LayerNorm(config.width)
        self.head = nn.Linear(config.width, self.token_dim)
        nn.init.normal_(self.head.weight, std=0.02)
        nn.init.zeros_(self.head.bias)

    def _tokens(self, frames: torch.Tensor) -> torch.Tensor:
        B = frames.shape[0]
        tp = self.config.token_patch
        gh, gw = self.grid
        x = frames.reshape(B, SEQ_LEN, gh, tp, gw, tp, self.config.latent_c)
        x = x.permute(0, 1, 2, 4, 3, 5, 6)
        return x.reshape(B, SEQ_LEN, self.n_cells, self.token_dim)

    def _untokens(self, x: torch.Tensor) -> torch.Tensor:
        B = x.shape[0]
        tp = self.config.token_patch
        gh, gw = self.grid
        c = self.config.latent_c
        x = x.reshape(B, SEQ_LEN, gh, gw, tp, tp, c).permute(0, 1, 2, 4, 3, 5, 6)
        return x.reshape(B, SEQ_LEN, gh * tp, gw * tp, c)

    def forward(self, frames: torch.Tensor, times: torch.Tensor) -> torch.Tensor:
        """frames: (B, 7, h, w, c); times: (B, 7) flow time per frame."""
        B = frames.shape[0]
        x = self.token_in(self._tokens(frames))
        x = x + self.pos_emb[None, None] + self.frame_emb[None, :, None]
        temb = self.time_mlp(sinusoidal_embedding(times, self.config.width))
        x = (x + temb[:, :, None, :]).reshape(B, SEQ_LEN * self.n_cells, self.config.width)
        for block in self.blocks:
            x = block(x)
        out = self._untokens(self.head(self.ln_out(x)).reshape(B, SEQ_LEN, self.n_cells, -1))
        if not torch.isfinite(out).all():
            bad = (~torch.isfinite(out)).sum().item()
            raise FloatingPointError(
                f"non-finite velocity output: {bad} bad entries, "
                f"input range [{frames.min().item():.3g}, {frames.max().item():.3g}]"
            )
        return out

    def target_times(self, tau: torch.Tensor) -> torch.Tensor:
        """Per-frame time vector: 0 for conditioning, tau for targets."""
        times = torch.zeros(tau.shape[0], SEQ_LEN, dtype=tau.dtype, device=tau.device)
        times[:, TARGET_INDICES[0]] = tau
        times[:, TARGET_INDICES[1]] = tau
        return times


def forward_velocity(
    model: VelocityModel, seq_noised: LatentSequence, tau: float
) -> tuple[np.ndarray, np.ndarray]:
    """Velocity predictions for the two target frames of one sequence."""
    frames = torch.from_numpy(seq_noised.frames[None])
    times = model.target_times(torch.full((1,), float(tau)))
    with torch.no_grad():
        v = model(frames, times)
    return (
        v[0, TARGET_INDICES[0]].numpy(),
        v[0, TARGET_INDICES[1]].numpy(),
    )


def count_params(config: ModelConfig) -> int:
    """Exact learned-parameter count for a config."""
    model = VelocityModel(config)
    return sum(p.numel() for p in model.parameters())
