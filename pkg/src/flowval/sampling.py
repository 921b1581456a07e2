"""Deterministic reverse-flow inference and value extraction.

Inference fills the two target slots with standard Gaussian noise and
Euler-integrates the learned velocity field from flow time 1 down to 0
over n_steps uniform sub-intervals, holding the conditioning frames
clean:

    z <- z - (1/n) * v(z; tau_k, c),   tau_k = 1 - k/n,  k = 0..n-1

With the constant-velocity target this coincides with deterministic
DDIM-style sampling, and one step reduces to z0_hat = z1 - v(z1; 1, c).
The recovered frames are decoded into the future proprioception and a
value estimate; the initial noise is drawn from a per-call seeded
generator (future-proprio frame first), so calls are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .codec import LatentCodec
from .episodes import Episode, JointObservation, Proprioception
from .model import SEQ_LEN, TARGET_INDICES
from .returns import RewardSchedule, return_to_go


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 1
    seed: int = 0
    n_seeds: int = 1

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")


@dataclass(frozen=True)
class ValueEstimate:
    """Decoded scalar return plus the derived progress score."""

    v_hat: float
    progress: float
    raw_frame_mean: float

    @classmethod
    def from_raw_mean(cls, raw_mean: float) -> "ValueEstimate":
        v = min(2.0, max(0.0, raw_mean + 1.0))
        return cls(v_hat=v, progress=1.0 - min(v, 1.0), raw_frame_mean=raw_mean)


def _conditioning_frames(codec: LatentCodec, x_t: JointObservation) -> np.ndarray:
    frames = np.zeros((SEQ_LEN, *codec.frame_shape), dtype=np.float32)
    frames[1] = codec.encode_proprio(x_t.proprio)
    for k in range(3):
        frames[2 + k] = codec.encode_image(x_t.obs.views[k])
    return frames


def _euler_recover(model, cond: torch.Tensor, noise: torch.Tensor, n_steps: int) -> torch.Tensor:
    """Integrate the velocity field from tau=1 to 0 on the target frames."""
    i0, i1 = TARGET_INDICES
    z = noise.clone()
    frames = cond.clone()
    dt = 1.0 / n_steps
    with torch.no_grad():
        for k in range(n_steps):
            tau_k = 1.0 - k * dt
            frames[:, i0 : i1 + 1] = z
            times = torch.zeros(frames.shape[0], SEQ_LEN, dtype=frames.dtype)
            times[:, i0] = tau_k
            times[:, i1] = tau_k
            v = model(frames, times)
            z = z - dt * v[:, i0 : i1 + 1]
    if not torch.isfinite(z).all():
        raise FloatingPointError("non-finite latents after reverse integration")
    return z


def _decode_batch(
    codec: LatentCodec, z: np.ndarray
) -> tuple[list[np.ndarray], list[float]]:
    qs, raw_means = [], []
    for b in range(z.shape[0]):
        qs.append(codec.decode_proprio(z[b, 0], codec.spec.d_q).values)
        raw_means.append(float(np.mean(z[b, 1].astype(np.float64))))
    return qs, raw_means


def _infer_many(
    model,
    codec: LatentCodec,
    cond_batch: np.ndarray,
    config: SamplerConfig,
) -> tuple[np.ndarray, list[ValueEstimate]]:
    """Shared path: recover targets for a batch of conditioning stacks.

    The same per-call noise is used for every element of the batch, so a
    trace over many steps is one deterministic model sweep per Euler step.
    Seed-averaging decodes each seed separately and averages the decoded
    quantities.
    """
    P = cond_batch.shape[0]
    rng = np.random.default_rng(config.seed)
    noise = rng.standard_normal((config.n_seeds, 2, *codec.frame_shape)).astype(np.float32)
    cond = torch.from_numpy(cond_batch)

    q_acc = np.zeros((P, codec.spec.d_q), dtype=np.float64)
    v_acc = np.zeros(P, dtype=np.float64)
    raw_acc = np.zeros(P, dtype=np.float64)
    for s in range(config.n_seeds):
        z1 = torch.from_numpy(np.broadcast_to(noise[s], (P, 2, *codec.frame_shape)).copy())
        z0 = _euler_recover(model, cond, z1, config.n_steps).numpy()
        qs, raw_means = _decode_batch(codec, z0)
        for b in range(P):
            q_acc[b] += qs[b]
            est = ValueEstimate.from_raw_mean(raw_means[b])
            v_acc[b] += est.v_hat
            raw_acc[b] += est.raw_frame_mean
    q_acc /= config.n_seeds
    v_acc /= config.n_seeds
    raw_acc /= config.n_seeds
    estimates = [
        ValueEstimate(
            v_hat=float(v_acc[b]),
            progress=1.0 - min(float(v_acc[b]), 1.0),
            raw_frame_mean=float(raw_acc[b]),
        )
        for b in range(P)
    ]
    return q_acc, estimates


def infer(
    model, codec: LatentCodec, x_t: JointObservation, config: SamplerConfig
) -> tuple[Proprioception, ValueEstimate]:
    """Predict (future proprioception, value estimate) for one observation."""
    cond = _conditioning_frames(codec, x_t)[None]
    q, estimates = _infer_many(model, codec, cond, config)
    return Proprioception(values=q[0].astype(np.float32)), estimates[0]


def value_trace(
    model,
    codec: LatentCodec,
    episode: Episode,
    stride: int,
    config: SamplerConfig,
) -> list[dict]:
    """Value estimates at t = 0, stride, 2*stride, ..., T (T always included)."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    points = list(range(0, episode.T + 1, stride))
    if points[-1] != episode.T:
        points.append(episode.T)

    cond = np.stack([_conditioning_frames(codec, episode.step(t)) for t in points])
    _, estimates = _infer_many(model, codec, cond, config)

    sched = RewardSchedule(T=episode.T, success=episode.success)
    rows = []
    for t, est in zip(points, estimates):
        rows.append(
            {
                "t": t,
                "v_hat": est.v_hat,
                "progress": est.progress,
                "g_true": return_to_go(sched, t),
            }
        )
    return rows


def write_trace_csv(path: str | Path, rows: list[dict]) -> None:
    lines = ["t,v_hat,progress,g_true"]
    for r in rows:
        lines.append(f"{r['t']},{r['v_hat']!r},{r['progress']!r},{r['g_true']!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def advantage(
    model,
    codec: LatentCodec,
    episode: Episode,
    t: int,
    K: int,
    config: SamplerConfig,
) -> float:
    """v_hat(x_t) - v_hat(x_{min(t+K, T)}).

    Positive means the predicted return-to-go dropped over the window,
    i.e. the robot made progress; at t = T the clamped window is empty
    and the advantage is exactly 0.
    """
    if not 0 <= t <= episode.T:
        raise ValueError(f"step index t={t} outside [0, {episode.T}]")
    t2 = min(t + K, episode.T)
    if t2 == t:
        return 0.0
    cond = np.stack(
        [
            _conditioning_frames(codec, episode.step(t)),
            _conditioning_frames(codec, episode.step(t2)),
        ]
    )
    _, estimates = _infer_many(model, codec, cond, config)
    return estimates[0].v_hat - estimates[1].v_hat
