"""Bidirectional mapping between modalities and fixed-shape latent frames.

Every modality is carried by a real-valued block of shape (h, w, c):

    proprioception  normalized per-dimension to [-1, 1], then tiled
                    cyclically until the frame is full; decoded by
                    averaging the complete d_q-sized chunks (the partial
                    tail chunk is written on encode but ignored on decode,
                    keeping the decode an exact inverse)
    scalar value    broadcast: every cell holds G - 1, for G in [0, 2];
                    decoded as mean(frame) + 1, clamped to [0, 2]
    RGB image       non-overlapping pixel patches scaled to [-1, 1] and
                    passed through a fixed seeded linear projection whose
                    column sums are forced nonzero (so constant patches
                    map to distinct, nonzero latents)
    blank           the all-zeros placeholder frame

Proprioception values outside the normalization range are clamped to
[-1, 1]; clamp events are counted on the codec for log surfacing.
All arithmetic runs in float64; frames are stored float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .episodes import Proprioception

VALUE_RANGE = (0.0, 2.0)


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-dimension proprioception bounds mapped onto [-1, 1]."""

    proprio_min: np.ndarray
    proprio_max: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.proprio_min, dtype=np.float64)
        hi = np.asarray(self.proprio_max, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError(f"bounds must be matching vectors, got {lo.shape} and {hi.shape}")
        if not np.all(hi > lo):
            raise ValueError("proprio_max must exceed proprio_min elementwise")
        object.__setattr__(self, "proprio_min", lo)
        object.__setattr__(self, "proprio_max", hi)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NormalizationSpec):
            return NotImplemented
        return np.array_equal(self.proprio_min, other.proprio_min) and np.array_equal(
            self.proprio_max, other.proprio_max
        )

    @property
    def d_q(self) -> int:
        return int(self.proprio_min.shape[0])

    def to_dict(self) -> dict:
        return {
            "proprio_min": [float(v) for v in self.proprio_min],
            "proprio_max": [float(v) for v in self.proprio_max],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationSpec":
        return cls(
            proprio_min=np.asarray(d["proprio_min"], dtype=np.float64),
            proprio_max=np.asarray(d["proprio_max"], dtype=np.float64),
        )


def _image_projection(in_dim: int, channels: int, seed: int) -> np.ndarray:
    """Fixed random projection with every column sum forced to 0.5."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((in_dim, channels)) / math.sqrt(in_dim)
    w = w - w.mean(axis=0, keepdims=True) + 0.5 / in_dim
    return w


class LatentCodec:
    """Encodes/decodes all modalities for one fixed latent geometry."""

    def __init__(
        self,
        h: int,
        w: int,
        c: int,
        spec: NormalizationSpec,
        image_hw: tuple[int, int] = (32, 32),
        image_seed: int = 0,
    ):
        self.h, self.w, self.c = int(h), int(w), int(c)
        self.spec = spec
        self.image_hw = (int(image_hw[0]), int(image_hw[1]))
        self.image_seed = int(image_seed)
        self.clamp_count = 0

        if self.image_hw[0] % self.h or self.image_hw[1] % self.w:
            raise ValueError(
                f"image dims {self.image_hw} not divisible by latent grid ({self.h}, {self.w})"
            )
        self.patch = (self.image_hw[0] // self.h, self.image_hw[1] // self.w)
        in_dim = self.patch[0] * self.patch[1] * 3
        self._proj = _image_projection(in_dim, self.c, self.image_seed)

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return (self.h, self.w, self.c)

    @property
    def n_cells(self) -> int:
        return self.h * self.w * self.c

    # -- proprioception -----------------------------------------------------

    def _normalize(self, q: np.ndarray) -> np.ndarray:
        u = 2.0 * (q - self.spec.proprio_min) / (self.spec.proprio_max - self.spec.proprio_min) - 1.0
        clipped = np.clip(u, -1.0, 1.0)
        self.clamp_count += int(np.sum(clipped != u))
        return clipped

    def encode_proprio(self, q: Proprioception | np.ndarray) -> np.ndarray:
        values = q.values if isinstance(q, Proprioception) else np.asarray(q)
        values = values.astype(np.float64)
        d_q = values.shape[-1]
        if d_q > self.n_cells:
            raise ValueError(f"d_q={d_q} exceeds frame capacity {self.n_cells}")
        u = self._normalize(values)
        reps = -(-self.n_cells // d_q)  # ceil
        flat = np.tile(u, reps)[: self.n_cells]
        return flat.reshape(self.frame_shape).astype(np.float32)

    def decode_proprio(self, z: np.ndarray, d_q: int) -> Proprioception:
        if z.shape != self.frame_shape:
            raise ValueError(f"frame shape {z.shape} != {self.frame_shape}")
        flat = z.astype(np.float64).reshape(-1)
        n_full = self.n_cells // d_q
        u = flat[: n_full * d_q].reshape(n_full, d_q).mean(axis=0)
        q = (u + 1.0) / 2.0 * (self.spec.proprio_max - self.spec.proprio_min) + self.spec.proprio_min
        return Proprioception(values=q.astype(np.float32))

    # -- scalar value --------------------------------------------------------

    def encode_value(self, G: float) -> np.ndarray:
        if not VALUE_RANGE[0] <= G <= VALUE_RANGE[1]:
            raise ValueError(f"value {G} outside {VALUE_RANGE}")
        return np.full(self.frame_shape, G - 1.0, dtype=np.float32)

    def decode_value(self, z: np.ndarray) -> float:
        v = float(np.mean(z.astype(np.float64))) + 1.0
        return min(VALUE_RANGE[1], max(VALUE_RANGE[0], v))

    # -- images ---------------------------------------------------------------

    def encode_image(self, view: np.ndarray) -> np.ndarray:
        if view.shape != (*self.image_hw, 3):
            raise ValueError(f"image shape {view.shape} != {(*self.image_hw, 3)}")
        ph, pw = self.patch
        u = view.astype(np.float64) / 255.0 * 2.0 - 1.0
        # (h, ph, w, pw, 3) -> (h, w, ph*pw*3)
        patches = u.reshape(self.h, ph, self.w, pw, 3).transpose(0, 2, 1, 3, 4)
        patches = patches.reshape(self.h, self.w, ph * pw * 3)
        return (patches @ self._proj).astype(np.float32)

    # -- blank ---------------------------------------------------------------

    def blank_frame(self) -> np.ndarray:
        return np.zeros(self.frame_shape, dtype=np.float32)
