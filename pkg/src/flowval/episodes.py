"""Trajectory data model, on-disk dataset format, and training-tuple sampling.

An episode is T+1 steps (indices 0..T) of three RGB camera views plus a
proprioception vector, a terminal success flag, a task id, and optional
side-channel metadata (ground-truth progress, injected failure event,
object shape tag). Datasets are written as a JSON manifest plus raw binary
blobs per episode:

    <root>/manifest.json            version, d_q, H, W, per-episode entries
    <root>/ep_<id>/proprio.f32      (T+1, d_q) little-endian float32, row-major
    <root>/ep_<id>/view<k>.u8       (T+1, H, W, 3) uint8, k in {1,2,3}

Every blob carries a SHA-256 checksum in the manifest; reads verify them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .returns import RewardSchedule, return_to_go

MANIFEST_VERSION = 1
N_VIEWS = 3


class DatasetError(Exception):
    """Malformed, inconsistent, or corrupted dataset."""


@dataclass(frozen=True)
class Proprioception:
    """Joint angles (radians) plus gripper aperture, as a flat float vector."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 1:
            raise ValueError(f"proprioception must be a flat vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("proprioception contains non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class MultiViewObservation:
    """Exactly three RGB views of the same scene, stacked as (3, H, W, 3) uint8."""

    views: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.views, dtype=np.uint8)
        if v.ndim != 4 or v.shape[0] != N_VIEWS or v.shape[3] != 3:
            raise ValueError(f"expected views of shape (3, H, W, 3), got {v.shape}")
        object.__setattr__(self, "views", v)


@dataclass(frozen=True)
class JointObservation:
    obs: MultiViewObservation
    proprio: Proprioception


@dataclass
class Episode:
    """One labeled trajectory.

    Arrays are stored stacked for compactness: ``proprio`` is (T+1, d_q)
    float32 and ``views`` is (T+1, 3, H, W, 3) uint8. ``meta`` holds
    JSON-safe side-channel data produced by the simulator (per-step
    ground-truth progress, failure event, object shape) and round-trips
    through the dataset manifest.
    """

    proprio: np.ndarray
    views: np.ndarray
    success: bool
    task_id: str
    meta: dict = field(default_factory=dict)
    ep_id: str = ""

    def __post_init__(self) -> None:
        self.proprio = np.ascontiguousarray(self.proprio, dtype=np.float32)
        self.views = np.ascontiguousarray(self.views, dtype=np.uint8)
        if self.proprio.ndim != 2:
            raise ValueError(f"proprio must be (T+1, d_q), got {self.proprio.shape}")
        if self.views.ndim != 5 or self.views.shape[1] != N_VIEWS or self.views.shape[4] != 3:
            raise ValueError(f"views must be (T+1, 3, H, W, 3), got {self.views.shape}")
        if self.views.shape[0] != self.proprio.shape[0]:
            raise ValueError("proprio and views disagree on step count")
        if self.T < 1:
            raise ValueError("episode needs at least 2 steps (T >= 1)")
        if not np.all(np.isfinite(self.proprio)):
            raise ValueError("episode proprioception contains non-finite entries")

    @property
    def T(self) -> int:
        """Terminal step index; the episode has T+1 steps."""
        return int(self.proprio.shape[0]) - 1

    @property
    def d_q(self) -> int:
        return int(self.proprio.shape[1])

    @property
    def image_hw(self) -> tuple[int, int]:
        return int(self.views.shape[2]), int(self.views.shape[3])

    def step(self, t: int) -> JointObservation:
        if not 0 <= t <= self.T:
            raise ValueError(f"step index t={t} outside [0, {self.T}]")
        return JointObservation(
            obs=MultiViewObservation(views=self.views[t]),
            proprio=Proprioception(values=self.proprio[t]),
        )

    @property
    def steps(self) -> list[JointObservation]:
        return [self.step(t) for t in range(self.T + 1)]


@dataclass(frozen=True)
class TrainingTuple:
    """Raw inputs for one training sample: current step, clamped future
    proprioception at min(t+K, T), and the return-to-go target."""

    current: JointObservation
    future_proprio: Proprioception
    return_target: float
    t: int
    episode_ref: str


def sample_tuple(episode: Episode, t: int, K: int) -> TrainingTuple:
    """Assemble the (current, future, return) triple for step t of an episode.

    The future index is clamped to the terminal step, so every t in 0..T is
    usable; the return target comes from the episode's outcome label.
    """
    if K < 1:
        raise ValueError(f"horizon K must be >= 1, got {K}")
    if not 0 <= t <= episode.T:
        raise ValueError(f"step index t={t} outside [0, {episode.T}]")
    future_t = min(t + K, episode.T)
    target = return_to_go(RewardSchedule(T=episode.T, success=episode.success), t)
    return TrainingTuple(
        current=episode.step(t),
        future_proprio=Proprioception(values=episode.proprio[future_t]),
        return_target=target,
        t=t,
        episode_ref=episode.ep_id or episode.task_id,
    )


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _check_homogeneous(episodes: list[Episode]) -> tuple[int, int, int]:
    d_q = episodes[0].d_q
    H, W = episodes[0].image_hw
    for ep in episodes:
        if ep.d_q != d_q or ep.image_hw != (H, W):
            ref = ep.ep_id or ep.task_id
            raise DatasetError(
                f"episode {ref!r} is dimensionally inconsistent: "
                f"d_q={ep.d_q} vs {d_q}, image {ep.image_hw} vs {(H, W)}"
            )
    return d_q, H, W


def write_dataset(episodes: list[Episode], path: str | Path) -> dict:
    """Write episodes under ``path`` and return the manifest dict.

    Episode ids are assigned sequentially (ep_0000, ...). The write is
    deterministic given the episodes, so identical inputs produce
    byte-identical datasets.
    """
    if not episodes:
        raise DatasetError("empty dataset")
    d_q, H, W = _check_homogeneous(episodes)

    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    entries = []
    total_steps = 0
    for i, ep in enumerate(episodes):
        ep_id = f"ep_{i:04d}"
        ep.ep_id = ep_id
        ep_dir = root / ep_id
        ep_dir.mkdir(exist_ok=True)

        blobs: dict[str, bytes] = {
            "proprio.f32": ep.proprio.astype("<f4").tobytes(order="C"),
        }
        for k in range(N_VIEWS):
            blobs[f"view{k + 1}.u8"] = ep.views[:, k].tobytes(order="C")

        checksums = {}
        for name, data in blobs.items():
            (ep_dir / name).write_bytes(data)
            checksums[name] = _sha256(data)

        entries.append(
            {
                "id": ep_id,
                "task_id": ep.task_id,
                "T": ep.T,
                "success": bool(ep.success),
                "checksums": checksums,
                "meta": ep.meta,
            }
        )
        total_steps += ep.T + 1

    manifest = {
        "version": MANIFEST_VERSION,
        "d_q": d_q,
        "H": H,
        "W": W,
        "n_episodes": len(episodes),
        "n_steps": total_steps,
        "episodes": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def read_manifest(path: str | Path) -> dict:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    version = manifest.get("version")
    if version != MANIFEST_VERSION:
        raise DatasetError(f"unsupported dataset version {version!r} (expected {MANIFEST_VERSION})")
    return manifest


def read_dataset(path: str | Path) -> list[Episode]:
    """Load all episodes from a dataset directory, verifying checksums."""
    root = Path(path)
    manifest = read_manifest(root)
    d_q, H, W = manifest["d_q"], manifest["H"], manifest["W"]

    episodes = []
    for entry in manifest["episodes"]:
        ep_id = entry["id"]
        T = entry["T"]
        ep_dir = root / ep_id

        arrays: dict[str, bytes] = {}
        for name, expected_sha in entry["checksums"].items():
            fpath = ep_dir / name
            if not fpath.exists():
                raise DatasetError(f"missing step file {fpath}")
            data = fpath.read_bytes()
            if _sha256(data) != expected_sha:
                raise DatasetError(f"checksum mismatch in {fpath}")
            arrays[name] = data

        n_prop = (T + 1) * d_q * 4
        if len(arrays["proprio.f32"]) != n_prop:
            raise DatasetError(f"truncated step file {ep_dir / 'proprio.f32'}")
        proprio = np.frombuffer(arrays["proprio.f32"], dtype="<f4").reshape(T + 1, d_q)

        views = np.empty((T + 1, N_VIEWS, H, W, 3), dtype=np.uint8)
        n_view = (T + 1) * H * W * 3
        for k in range(N_VIEWS):
            raw = arrays[f"view{k + 1}.u8"]
            if len(raw) != n_view:
                raise DatasetError(f"truncated step file {ep_dir / f'view{k + 1}.u8'}")
            views[:, k] = np.frombuffer(raw, dtype=np.uint8).reshape(T + 1, H, W, 3)

        episodes.append(
            Episode(
                proprio=proprio.copy(),
                views=views,
                success=entry["success"],
                task_id=entry["task_id"],
                meta=entry.get("meta", {}),
                ep_id=ep_id,
            )
        )
    return episodes
