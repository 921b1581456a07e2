"""Discriminative value baseline: 201-way classification over return bins.

A small shared-weight CNN embeds each of the three views, an MLP embeds
the proprioception, and a trunk MLP maps the concatenation to logits over
201 uniform bins spanning [0, 2]. The scalar value estimate is the
expectation of bin centers under the softmax (invariant to constant logit
shifts). The final layer is zero-initialized, so the untrained predictive
distribution is exactly uniform.

Training, checkpointing, and the RNG/determinism contract mirror the
flow-model trainer; the checkpoint container is shared, with magic VBCL.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import CheckpointError, read_container, write_container
from .codec import NormalizationSpec
from .episodes import Episode, JointObservation
from .sampling import ValueEstimate
from .training import Adam, TrainSchedule, cosine_lr, fit_normalization

BASELINE_MAGIC = b"VBCL"


@dataclass(frozen=True)
class BinSpec:
    """Uniform discretization of [lo, hi] into n_bins right-open intervals
    (the last bin is right-closed)."""

    n_bins: int = 201
    lo: float = 0.0
    hi: float = 2.0

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.n_bins

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_bins + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return (e[:-1] + e[1:]) / 2.0


def bin_index(G: float | np.ndarray, spec: BinSpec = BinSpec()) -> int | np.ndarray:
    """floor(G / width) with the terminal value clamped into the last bin."""
    g = np.asarray(G, dtype=np.float64)
    if np.any(g < spec.lo) or np.any(g > spec.hi):
        raise ValueError(f"value outside [{spec.lo}, {spec.hi}]")
    idx = np.minimum(np.floor((g - spec.lo) / spec.width).astype(np.int64), spec.n_bins - 1)
    return int(idx) if np.isscalar(G) or g.ndim == 0 else idx


@dataclass(frozen=True)
class BaselineConfig:
    d_q: int = 3
    img_h: int = 32
    img_w: int = 32
    n_bins: int = 201
    view_dim: int = 128
    hidden: int = 512

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineConfig":
        return cls(**d)


class BaselineNet(nn.Module):
    def __init__(self, config: BaselineConfig):
        super().__init__()
        self.config = config
        self.conv = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.ReLU(),
        )
        feat = 64 * (config.img_h // 8) * (config.img_w // 8)
        self.view_fc = nn.Linear(feat, config.view_dim)
        self.prop_fc = nn.Sequential(nn.Linear(config.d_q, 64), nn.ReLU(), nn.Linear(64, 64))
        trunk_in = 3 * config.view_dim + 64
        self.trunk = nn.Sequential(
            nn.Linear(trunk_in, config.hidden),
            nn.ReLU(),
            nn.Linear(config.hidden, config.hidden),
            nn.ReLU(),
        )
        self.logits = nn.Linear(config.hidden, config.n_bins)
        nn.init.zeros_(self.logits.weight)
        nn.init.zeros_(self.logits.bias)

    def forward(self, views: torch.Tensor, proprio: torch.Tensor) -> torch.Tensor:
        """views: (B, 3, H, W, 3) in [-1, 1]; proprio: (B, d_q) normalized."""
        B = views.shape[0]
        x = views.permute(0, 1, 4, 2, 3).reshape(B * 3, 3, views.shape[2], views.shape[3])
        x = self.conv(x).reshape(B * 3, -1)
        x = F.relu(self.view_fc(x)).reshape(B, -1)
        p = self.prop_fc(proprio)
        return self.logits(self.trunk(torch.cat([x, p], dim=1)))


def baseline_param_count(config: BaselineConfig) -> int:
    return sum(p.numel() for p in BaselineNet(config).parameters())


def baseline_config_matching(
    target_params: int, d_q: int = 3, img_hw: tuple[int, int] = (32, 32)
) -> BaselineConfig:
    """Pick (view_dim, hidden) whose parameter count is closest to the
    target, for capacity-matched comparisons."""
    best = None
    for view_dim in (32, 64, 96, 128):
        for hidden in (32, 48, 64, 96, 128, 192, 256, 384, 512, 640):
            cfg = BaselineConfig(
                d_q=d_q, img_h=img_hw[0], img_w=img_hw[1], view_dim=view_dim, hidden=hidden
            )
            n = baseline_param_count(cfg)
            score = abs(math.log(n / target_params))
            if best is None or score < best[0]:
                best = (score, cfg)
    return best[1]


# ---------------------------------------------------------------------------
# Training


@dataclass
class BaselineCheckpoint:
    config: BaselineConfig
    norm_spec: NormalizationSpec
    params: dict[str, np.ndarray]
    opt_m: dict[str, np.ndarray]
    opt_v: dict[str, np.ndarray]
    opt_t: int
    step: int
    rng_state: dict
    schedule: TrainSchedule

    def build_model(self) -> BaselineNet:
        model = BaselineNet(self.config)
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.params.items()})
        return model


def save_baseline_checkpoint(path, ckpt: BaselineCheckpoint) -> None:
    header = {
        "config": ckpt.config.to_dict(),
        "norm_spec": ckpt.norm_spec.to_dict(),
        "opt_t": ckpt.opt_t,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "schedule": {
            "steps": ckpt.schedule.steps,
            "batch": ckpt.schedule.batch,
            "lr": ckpt.schedule.lr,
            "seed": ckpt.schedule.seed,
        },
    }
    blobs = {}
    for k, v in ckpt.params.items():
        blobs[f"param/{k}"] = v
    for k, v in ckpt.opt_m.items():
        blobs[f"adam_m/{k}"] = v
    for k, v in ckpt.opt_v.items():
        blobs[f"adam_v/{k}"] = v
    write_container(path, BASELINE_MAGIC, header, blobs)


def load_baseline_checkpoint(path) -> BaselineCheckpoint:
    header, blobs = read_container(path, BASELINE_MAGIC)
    config = BaselineConfig.from_dict(header["config"])
    params = {k[len("param/") :]: v for k, v in blobs.items() if k.startswith("param/")}
    reference = BaselineNet(config)
    for name, p in reference.named_parameters():
        if name not in params or tuple(params[name].shape) != tuple(p.shape):
            raise CheckpointError(f"geometry mismatch for baseline parameter {name}")
    sc = header["schedule"]
    return BaselineCheckpoint(
        config=config,
        norm_spec=NormalizationSpec.from_dict(header["norm_spec"]),
        params=params,
        opt_m={k[len("adam_m/") :]: v for k, v in blobs.items() if k.startswith("adam_m/")},
        opt_v={k[len("adam_v/") :]: v for k, v in blobs.items() if k.startswith("adam_v/")},
        opt_t=header["opt_t"],
        step=header["step"],
        rng_state=header["rng_state"],
        schedule=TrainSchedule(sc["steps"], sc["batch"], sc["lr"], sc["seed"]),
    )


def _normalize_proprio(spec: NormalizationSpec, q: np.ndarray) -> np.ndarray:
    u = 2.0 * (q - spec.proprio_min) / (spec.proprio_max - spec.proprio_min) - 1.0
    return np.clip(u, -1.0, 1.0)


def train_baseline(
    episodes: list[Episode],
    config: BaselineConfig,
    schedule: TrainSchedule,
    permute_labels_seed: int | None = None,
) -> tuple[BaselineCheckpoint, list[dict]]:
    """Cross-entropy training over discretized returns.

    ``permute_labels_seed`` shuffles the return targets across all
    (episode, step) pairs: the permutation-null control for sanity
    checks. Metrics rows share the flow trainer's schema; the whole loss
    is the value loss, so loss_prop is logged as 0.
    """
    if not episodes:
        raise ValueError("empty training corpus")
    for ep in episodes:
        if ep.d_q != config.d_q or ep.image_hw != (config.img_h, config.img_w):
            raise ValueError("dataset/config mismatch for baseline")

    binspec = BinSpec(n_bins=config.n_bins)
    norm_spec = fit_normalization(episodes)

    torch.manual_seed(schedule.seed)
    model = BaselineNet(config)
    opt = Adam(dict(model.named_parameters()))
    rng = np.random.default_rng(schedule.seed)

    ep_T = np.array([ep.T for ep in episodes])
    prop_norm = [
        _normalize_proprio(norm_spec, ep.proprio.astype(np.float64)).astype(np.float32)
        for ep in episodes
    ]
    g_all = []
    for ep in episodes:
        t_axis = np.arange(ep.T + 1, dtype=np.float64)
        g_all.append((ep.T - t_axis) / ep.T + (0.0 if ep.success else 1.0))
    bins_all = [bin_index(g, binspec) for g in g_all]

    if permute_labels_seed is not None:
        flat = np.concatenate(bins_all)
        perm = np.random.default_rng(permute_labels_seed).permutation(len(flat))
        flat = flat[perm]
        out, at = [], 0
        for ep in episodes:
            out.append(flat[at : at + ep.T + 1])
            at += ep.T + 1
        bins_all = out

    B = schedule.batch
    rows = []
    model.train()
    for step in range(schedule.steps):
        lr = cosine_lr(schedule.lr, step, schedule.steps)
        ep_idx = rng.integers(0, len(episodes), size=B)
        t = rng.integers(0, ep_T[ep_idx] + 1)

        views = np.empty((B, 3, config.img_h, config.img_w, 3), dtype=np.float32)
        prop = np.empty((B, config.d_q), dtype=np.float32)
        target = np.empty(B, dtype=np.int64)
        for b in range(B):
            e = int(ep_idx[b])
            views[b] = episodes[e].views[t[b]].astype(np.float32) / 255.0 * 2.0 - 1.0
            prop[b] = prop_norm[e][t[b]]
            target[b] = bins_all[e][t[b]]

        logits = model(torch.from_numpy(views), torch.from_numpy(prop))
        loss = F.cross_entropy(logits, torch.from_numpy(target))
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite baseline loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step(lr)
        rows.append(
            {
                "step": step,
                "total_loss": float(loss.item()),
                "loss_prop": 0.0,
                "loss_val": float(loss.item()),
                "lr": lr,
            }
        )

    ckpt = BaselineCheckpoint(
        config=config,
        norm_spec=norm_spec,
        params={k: p.detach().numpy().copy() for k, p in model.named_parameters()},
        opt_m={k: m.numpy().copy() for k, m in opt.m.items()},
        opt_v={k: v.numpy().copy() for k, v in opt.v.items()},
        opt_t=opt.t,
        step=schedule.steps,
        rng_state=rng.bit_generator.state,
        schedule=schedule,
    )
    return ckpt, rows


# ---------------------------------------------------------------------------
# Inference


def _predict_values(
    model: BaselineNet,
    norm_spec: NormalizationSpec,
    views_u8: np.ndarray,
    proprio: np.ndarray,
    binspec: BinSpec,
) -> np.ndarray:
    views = views_u8.astype(np.float32) / 255.0 * 2.0 - 1.0
    prop = _normalize_proprio(norm_spec, proprio.astype(np.float64)).astype(np.float32)
    with torch.no_grad():
        logits = model(torch.from_numpy(views), torch.from_numpy(prop))
        probs = torch.softmax(logits.double(), dim=1).numpy()
    return probs @ binspec.centers


def baseline_value(
    model: BaselineNet,
    norm_spec: NormalizationSpec,
    x_t: JointObservation,
    binspec: BinSpec = BinSpec(),
) -> ValueEstimate:
    """Expected bin center under the predictive distribution."""
    v = _predict_values(
        model, norm_spec, x_t.obs.views[None], x_t.proprio.values[None], binspec
    )[0]
    return ValueEstimate(v_hat=float(v), progress=1.0 - min(float(v), 1.0), raw_frame_mean=float(v) - 1.0)


def baseline_trace(
    ckpt: BaselineCheckpoint, episode: Episode, stride: int
) -> list[dict]:
    """Same trace schema as the flow sampler, for shared evaluation."""
    from .returns import RewardSchedule, return_to_go

    if stride < 1:
        raise ValueError("stride must be >= 1")
    points = list(range(0, episode.T + 1, stride))
    if points[-1] != episode.T:
        points.append(episode.T)
    model = ckpt.build_model()
    model.eval()
    binspec = BinSpec(n_bins=ckpt.config.n_bins)
    values = _predict_values(
        model,
        ckpt.norm_spec,
        episode.views[points],
        episode.proprio[points],
        binspec,
    )
    sched = RewardSchedule(T=episode.T, success=episode.success)
    return [
        {
            "t": t,
            "v_hat": float(v),
            "progress": 1.0 - min(float(v), 1.0),
            "g_true": return_to_go(sched, t),
        }
        for t, v in zip(points, values)
    ]
