"""Flow-matching objective, optimization loop, and checkpointing.

Training draws a step index t uniformly per episode sample, assembles the
clean 7-frame sequence, noises the two target frames along the linear
path z_tau = (1 - tau) z0 + tau z1 with a single tau ~ U[0,1] shared by
both targets of a sample (each target gets its own z1), and regresses the
network output on the constant velocity z1 - z0. The total loss is
lambda_prop * MSE(future-proprio frame) + lambda_val * MSE(value frame),
each MSE mean-reduced over its frame.

Optimization is plain adaptive-moment stochastic gradient descent:

    m <- beta1 m + (1 - beta1) g          beta1 = 0.9
    v <- beta2 v + (1 - beta2) g^2        beta2 = 0.999
    p <- p - lr * m_hat / (sqrt(v_hat) + eps)

with bias-corrected m_hat, v_hat and eps = 1e-8, under a cosine step-size
decay. All randomness flows through one seeded numpy generator whose
state is checkpointed, so save -> load -> continue reproduces an
uninterrupted run bit-for-bit on the same platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, read_container, write_container
from .codec import LatentCodec, NormalizationSpec
from .episodes import Episode, TrainingTuple, read_dataset
from .model import SEQ_LEN, TARGET_INDICES, ModelConfig, VelocityModel, assemble_sequence

MODEL_MAGIC = b"VIVA"


@dataclass(frozen=True)
class LossWeights:
    lambda_prop: float = 1.0
    lambda_val: float = 0.5

    def __post_init__(self) -> None:
        if self.lambda_prop < 0 or self.lambda_val < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_prop == 0 and self.lambda_val == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class TrainSchedule:
    steps: int = 20000
    batch: int = 32
    lr: float = 1e-4
    seed: int = 0


@dataclass(frozen=True)
class FlowSample:
    """One linear-path interpolation: z_tau = (1 - tau) z0 + tau z1."""

    z0: torch.Tensor
    z1: torch.Tensor
    tau: torch.Tensor

    @property
    def z_tau(self) -> torch.Tensor:
        t = self.tau.reshape(-1, *([1] * (self.z0.ndim - 1)))
        return (1.0 - t) * self.z0 + t * self.z1

    @property
    def velocity_target(self) -> torch.Tensor:
        # constant along the path: independent of tau by construction
        return self.z1 - self.z0


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / max(1, total_steps)))


def flow_loss_terms(
    model, clean: torch.Tensor, tau: torch.Tensor, z1: torch.Tensor, weights: LossWeights
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Deterministic loss given the noise draw; model may be any callable
    mapping (frames, times) -> per-frame velocities."""
    i_prop, i_val = TARGET_INDICES
    z0 = clean[:, i_prop : i_val + 1]
    sample = FlowSample(z0=z0, z1=z1, tau=tau)
    noised = clean.clone()
    noised[:, i_prop : i_val + 1] = sample.z_tau

    times = torch.zeros(clean.shape[0], SEQ_LEN, dtype=clean.dtype, device=clean.device)
    times[:, i_prop] = tau
    times[:, i_val] = tau
    v = model(noised, times)

    target = sample.velocity_target
    mse_prop = ((v[:, i_prop] - target[:, 0]) ** 2).mean()
    mse_val = ((v[:, i_val] - target[:, 1]) ** 2).mean()
    total = weights.lambda_prop * mse_prop + weights.lambda_val * mse_val
    return total, mse_prop, mse_val


def flow_loss(
    model: VelocityModel,
    codec: LatentCodec,
    tup: TrainingTuple,
    weights: LossWeights,
    rng: np.random.Generator,
) -> tuple[float, float, float]:
    """Single-tuple objective: samples (tau, z1), backpropagates, and
    returns (total, mse_prop, mse_val); gradients land in model.grad."""
    seq = assemble_sequence(tup.current, codec, tup.future_proprio, tup.return_target)
    clean = torch.from_numpy(seq.frames[None])
    tau = torch.from_numpy(rng.uniform(size=1).astype(np.float32))
    z1 = torch.from_numpy(
        rng.standard_normal((1, 2, *codec.frame_shape)).astype(np.float32)
    )
    total, mse_prop, mse_val = flow_loss_terms(model, clean, tau, z1, weights)
    if not torch.isfinite(total):
        raise RuntimeError(f"non-finite flow loss {total.item()}")
    total.backward()
    return float(total.item()), float(mse_prop.item()), float(mse_val.item())


def fit_normalization(episodes: list[Episode]) -> NormalizationSpec:
    """Per-dimension min/max over all steps, widened by 1% of the range
    per side; exactly-constant dimensions get an absolute 1e-3 margin."""
    if not episodes:
        raise ValueError("cannot fit normalization on an empty corpus")
    stacked = np.concatenate([ep.proprio for ep in episodes]).astype(np.float64)
    lo = stacked.min(axis=0)
    hi = stacked.max(axis=0)
    width = hi - lo
    pad = np.where(width == 0.0, 1e-3, 0.01 * width)
    return NormalizationSpec(proprio_min=lo - pad, proprio_max=hi + pad)


class Adam:
    """First-order adaptive-moment optimizer (see module docstring)."""

    def __init__(
        self,
        params: dict[str, torch.nn.Parameter],
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {k: torch.zeros_like(p) for k, p in params.items()}
        self.v = {k: torch.zeros_like(p) for k, p in params.items()}

    @torch.no_grad()
    def step(self, lr: float) -> None:
        b1, b2 = self.betas
        self.t += 1
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k].mul_(b1).add_(g, alpha=1.0 - b1)
            self.v[k].mul_(b2).addcmul_(g, g, value=1.0 - b2)
            denom = (self.v[k] / bc2).sqrt_().add_(self.eps)
            p.addcdiv_(self.m[k] / bc1, denom, value=-lr)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


@dataclass
class Checkpoint:
    """Everything needed to resume training or run inference."""

    config: ModelConfig
    norm_spec: NormalizationSpec
    params: dict[str, np.ndarray]
    opt_m: dict[str, np.ndarray]
    opt_v: dict[str, np.ndarray]
    opt_t: int
    step: int
    rng_state: dict
    loss_weights: LossWeights
    schedule: TrainSchedule
    extra: dict = field(default_factory=dict)

    def build_model(self) -> VelocityModel:
        model = VelocityModel(self.config)
        state = {k: torch.from_numpy(v.copy()) for k, v in self.params.items()}
        model.load_state_dict(state)
        return model

    def build_codec(self) -> LatentCodec:
        return self.config.build_codec(self.norm_spec)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    header = {
        "config": ckpt.config.to_dict(),
        "norm_spec": ckpt.norm_spec.to_dict(),
        "opt_t": ckpt.opt_t,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "loss_weights": {
            "lambda_prop": ckpt.loss_weights.lambda_prop,
            "lambda_val": ckpt.loss_weights.lambda_val,
        },
        "schedule": {
            "steps": ckpt.schedule.steps,
            "batch": ckpt.schedule.batch,
            "lr": ckpt.schedule.lr,
            "seed": ckpt.schedule.seed,
        },
        "extra": ckpt.extra,
    }
    blobs: dict[str, np.ndarray] = {}
    for k, v in ckpt.params.items():
        blobs[f"param/{k}"] = v
    for k, v in ckpt.opt_m.items():
        blobs[f"adam_m/{k}"] = v
    for k, v in ckpt.opt_v.items():
        blobs[f"adam_v/{k}"] = v
    write_container(path, MODEL_MAGIC, header, blobs)


def load_checkpoint(path: str | Path) -> Checkpoint:
    header, blobs = read_container(path, MODEL_MAGIC)
    config = ModelConfig.from_dict(header["config"])
    norm_spec = NormalizationSpec.from_dict(header["norm_spec"])

    params = {k[len("param/") :]: v for k, v in blobs.items() if k.startswith("param/")}
    opt_m = {k[len("adam_m/") :]: v for k, v in blobs.items() if k.startswith("adam_m/")}
    opt_v = {k[len("adam_v/") :]: v for k, v in blobs.items() if k.startswith("adam_v/")}

    reference = VelocityModel(config)
    for name, p in reference.named_parameters():
        if name not in params:
            raise CheckpointError(f"checkpoint missing parameter {name}")
        if tuple(params[name].shape) != tuple(p.shape):
            raise CheckpointError(
                f"geometry mismatch for {name}: checkpoint {params[name].shape} "
                f"vs config {tuple(p.shape)}"
            )

    lw = header["loss_weights"]
    sc = header["schedule"]
    return Checkpoint(
        config=config,
        norm_spec=norm_spec,
        params=params,
        opt_m=opt_m,
        opt_v=opt_v,
        opt_t=header["opt_t"],
        step=header["step"],
        rng_state=header["rng_state"],
        loss_weights=LossWeights(lw["lambda_prop"], lw["lambda_val"]),
        schedule=TrainSchedule(sc["steps"], sc["batch"], sc["lr"], sc["seed"]),
        extra=header.get("extra", {}),
    )


def _check_corpus(episodes: list[Episode], config: ModelConfig) -> None:
    if not episodes:
        raise ValueError("empty training corpus")
    for ep in episodes:
        if ep.d_q != config.d_q:
            raise ValueError(f"dataset/config mismatch: d_q {ep.d_q} vs {config.d_q}")
        if ep.image_hw != (config.img_h, config.img_w):
            raise ValueError(
                f"dataset/config mismatch: images {ep.image_hw} vs "
                f"{(config.img_h, config.img_w)}"
            )


def _precompute_latents(episodes: list[Episode], codec: LatentCodec):
    """Per-episode conditioning latents: image frames, tiled proprio
    frames, and normalized value targets (G - 1) per step."""
    img_lat, prop_lat, g_norm = [], [], []
    n = codec.n_cells
    d_q = codec.spec.d_q
    reps = -(-n // d_q)
    for ep in episodes:
        views = ep.views.astype(np.float64) / 255.0 * 2.0 - 1.0
        ph, pw = codec.patch
        t1 = views.reshape(-1, codec.h, ph, codec.w, pw, 3).transpose(0, 1, 3, 2, 4, 5)
        patches = t1.reshape(-1, codec.h, codec.w, ph * pw * 3)
        img = (patches @ codec._proj).astype(np.float32)
        img_lat.append(img.reshape(ep.T + 1, 3, codec.h, codec.w, codec.c))

        u = codec._normalize(ep.proprio.astype(np.float64))
        flat = np.tile(u, (1, reps))[:, :n]
        prop_lat.append(flat.reshape(ep.T + 1, *codec.frame_shape).astype(np.float32))

        t_axis = np.arange(ep.T + 1, dtype=np.float64)
        g = (ep.T - t_axis) / ep.T + (0.0 if ep.success else 1.0)
        g_norm.append((g - 1.0).astype(np.float32))
    return img_lat, prop_lat, g_norm


def train(
    episodes: list[Episode] | str | Path,
    config: ModelConfig,
    weights: LossWeights,
    schedule: TrainSchedule,
    resume: Checkpoint | None = None,
    until: int | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Run the optimization loop and return (checkpoint, metrics rows).

    ``until`` stops early at that step (for checkpoint/resume); the
    cosine decay always spans the full ``schedule.steps``. Metrics rows
    have keys step, total_loss, loss_prop, loss_val, lr (one per step).
    """
    if isinstance(episodes, (str, Path)):
        episodes = read_dataset(episodes)
    _check_corpus(episodes, config)

    torch.manual_seed(schedule.seed)
    model = VelocityModel(config)
    if resume is not None:
        if resume.config != config:
            raise ValueError("resume checkpoint config differs from requested config")
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in resume.params.items()})
        norm_spec = resume.norm_spec
    else:
        norm_spec = fit_normalization(episodes)
    codec = config.build_codec(norm_spec)

    params = dict(model.named_parameters())
    opt = Adam(params)
    rng = np.random.default_rng(schedule.seed)
    start_step = 0
    if resume is not None:
        for k in params:
            opt.m[k] = torch.from_numpy(resume.opt_m[k].copy())
            opt.v[k] = torch.from_numpy(resume.opt_v[k].copy())
        opt.t = resume.opt_t
        rng.bit_generator.state = resume.rng_state
        start_step = resume.step

    img_lat, prop_lat, g_norm = _precompute_latents(episodes, codec)
    ep_T = np.array([ep.T for ep in episodes])
    n_eps = len(episodes)
    B = schedule.batch
    h, w, c = codec.frame_shape
    stop_step = schedule.steps if until is None else min(until, schedule.steps)

    rows = []
    model.train()
    for step in range(start_step, stop_step):
        lr = cosine_lr(schedule.lr, step, schedule.steps)
        ep_idx = rng.integers(0, n_eps, size=B)
        t = rng.integers(0, ep_T[ep_idx] + 1)
        fut = np.minimum(t + config.horizon, ep_T[ep_idx])

        clean = np.zeros((B, SEQ_LEN, h, w, c), dtype=np.float32)
        for b in range(B):
            e = int(ep_idx[b])
            clean[b, 1] = prop_lat[e][t[b]]
            clean[b, 2:5] = img_lat[e][t[b]]
            clean[b, 5] = prop_lat[e][fut[b]]
            clean[b, 6] = g_norm[e][t[b]]
        tau = torch.from_numpy(rng.uniform(size=B).astype(np.float32))
        z1 = torch.from_numpy(rng.standard_normal((B, 2, h, w, c)).astype(np.float32))

        total, mse_prop, mse_val = flow_loss_terms(
            model, torch.from_numpy(clean), tau, z1, weights
        )
        if not torch.isfinite(total):
            raise RuntimeError(
                f"non-finite loss at step {step}: total={total.item()}, "
                f"prop={mse_prop.item()}, val={mse_val.item()}"
            )
        opt.zero_grad()
        total.backward()
        opt.step(lr)

        rows.append(
            {
                "step": step,
                "total_loss": float(total.item()),
                "loss_prop": float(mse_prop.item()),
                "loss_val": float(mse_val.item()),
                "lr": lr,
            }
        )

    ckpt = Checkpoint(
        config=config,
        norm_spec=norm_spec,
        params={k: p.detach().numpy().copy() for k, p in params.items()},
        opt_m={k: m.numpy().copy() for k, m in opt.m.items()},
        opt_v={k: v.numpy().copy() for k, v in opt.v.items()},
        opt_t=opt.t,
        step=stop_step,
        rng_state=rng.bit_generator.state,
        loss_weights=weights,
        schedule=schedule,
        extra={"clamp_count": codec.clamp_count},
    )
    return ckpt, rows


def write_metrics_csv(path: str | Path, rows: list[dict]) -> None:
    lines = ["step,total_loss,loss_prop,loss_val,lr"]
    for r in rows:
        lines.append(
            f"{r['step']},{r['total_loss']!r},{r['loss_prop']!r},{r['loss_val']!r},{r['lr']!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
