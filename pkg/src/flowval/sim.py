"""Synthetic multi-view pick-and-place simulator.

A 2-link planar arm (d_q = 3: two joint angles plus gripper aperture)
moves an object into a target zone on the unit square, driven by a
scripted waypoint controller with per-step joint noise. Episodes are
labeled successful iff the object center sits in the zone at the final
step and no failure event was injected. Three failure kinds exist:

    drop      gripper is forced open from the trigger step on; a held
              object falls where it is and can never be re-grasped
    misplace  the remaining script is retargeted to a decoy location,
              planned on the opposite elbow branch, so the object is
              delivered outside the zone
    stall     the controller freezes at the trigger and the joints drift
              slowly toward the rest pose (a proprioceptive anomaly)

Rendering produces three 32x32 RGB projections (top-down, side, front)
as a pure function of the world state. Ground-truth progress (fraction
of completed waypoints) is attached to each episode as side-channel
metadata along with the injected event and the object shape tag.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .episodes import Episode, MultiViewObservation

IMG_SIZE = 32
ARM_BASE = (0.5, 0.08)
L1 = 0.28
L2 = 0.22

FAILURE_KINDS = ("drop", "misplace", "stall")

_PICK_RADIUS = 0.05
_GRIP_CLOSE = 0.35
_GRIP_OPEN = 0.65
_WAYPOINT_TOL = 0.03
_GRIP_TOL = 0.06
_STALL_DROOP = 0.012
_REST_POSE = (0.0, 0.0)

# Entity colors (RGB uint8)
_C_BG = (18, 18, 24)
_C_ZONE = (40, 110, 40)
_C_OBJECT = (205, 60, 50)
_C_LINK1 = (70, 130, 220)
_C_LINK2 = (90, 200, 230)
_C_GRIPPER = (235, 235, 235)

# Pixel-center world coordinates, shared by all draw calls.
_GRID = (np.arange(IMG_SIZE) + 0.5) / IMG_SIZE
_WX = np.broadcast_to(_GRID[None, :], (IMG_SIZE, IMG_SIZE))
_WY = np.broadcast_to(1.0 - _GRID[:, None], (IMG_SIZE, IMG_SIZE))


@dataclass(frozen=True)
class Box:
    """Axis-aligned square zone: center and half side length."""

    cx: float
    cy: float
    half: float

    def contains(self, p) -> bool:
        return abs(p[0] - self.cx) <= self.half and abs(p[1] - self.cy) <= self.half


@dataclass
class WorldState:
    joints: tuple[float, float]
    gripper: float
    object_xy: tuple[float, float]
    target_zone: Box
    held: bool
    object_shape: str = "circle"
    object_size: float = 0.03


@dataclass(frozen=True)
class Waypoint:
    joints: tuple[float, float]
    gripper: float


@dataclass(frozen=True)
class FailureEvent:
    kind: str
    trigger: int

    def __post_init__(self) -> None:
        if self.kind not in FAILURE_KINDS:
            raise ValueError(f"unknown failure kind {self.kind!r}; expected one of {FAILURE_KINDS}")
        if self.trigger < 1:
            raise ValueError(f"trigger step must be >= 1, got {self.trigger}")


@dataclass
class ScriptConfig:
    """Full specification of one scripted rollout.

    ``alt_waypoints`` is the decoy tail used by the misplace event; it is
    ignored otherwise.
    """

    waypoints: list[Waypoint]
    object_start: tuple[float, float]
    target_zone: Box
    noise_scale: float = 0.004
    failure_event: FailureEvent | None = None
    alt_waypoints: list[Waypoint] = field(default_factory=list)
    object_shape: str = "circle"
    object_size: float = 0.03
    speed: float = 0.05
    grip_speed: float = 0.2
    task_id: str = "pick_place"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScriptConfig":
        d = json.loads(text)
        d["waypoints"] = [Waypoint(tuple(w["joints"]), w["gripper"]) for w in d["waypoints"]]
        d["alt_waypoints"] = [Waypoint(tuple(w["joints"]), w["gripper"]) for w in d["alt_waypoints"]]
        d["object_start"] = tuple(d["object_start"])
        d["target_zone"] = Box(**d["target_zone"])
        if d.get("failure_event") is not None:
            d["failure_event"] = FailureEvent(**d["failure_event"])
        return cls(**d)


def forward_kinematics(joints) -> tuple[np.ndarray, np.ndarray]:
    """Elbow and end-effector positions of the 2-link arm in world coords."""
    t1, t2 = joints
    base = np.asarray(ARM_BASE)
    elbow = base + L1 * np.array([math.cos(t1), math.sin(t1)])
    ee = elbow + L2 * np.array([math.cos(t1 + t2), math.sin(t1 + t2)])
    return elbow, ee


def inverse_kinematics(p, elbow_sign: int = 1) -> tuple[float, float]:
    """Joint angles reaching world point p; clamps unreachable targets."""
    dx = p[0] - ARM_BASE[0]
    dy = p[1] - ARM_BASE[1]
    d2 = dx * dx + dy * dy
    c2 = (d2 - L1 * L1 - L2 * L2) / (2 * L1 * L2)
    c2 = min(1.0, max(-1.0, c2))
    t2 = elbow_sign * math.acos(c2)
    t1 = math.atan2(dy, dx) - math.atan2(L2 * math.sin(t2), L1 + L2 * math.cos(t2))
    t1 = (t1 + math.pi) % (2 * math.pi) - math.pi
    return (t1, t2)


# ---------------------------------------------------------------------------
# Rendering


def _paint(img: np.ndarray, mask: np.ndarray, color) -> None:
    img[mask] = color


def _disc_mask(c, r) -> np.ndarray:
    return (_WX - c[0]) ** 2 + (_WY - c[1]) ** 2 <= r * r


def _rect_mask(x0, x1, y0, y1) -> np.ndarray:
    return (_WX >= x0) & (_WX <= x1) & (_WY >= y0) & (_WY <= y1)


def _segment_mask(a, b, thick) -> np.ndarray:
    ax, ay = a
    bx, by = b
    vx, vy = bx - ax, by - ay
    L2seg = vx * vx + vy * vy
    if L2seg < 1e-12:
        return _disc_mask(a, thick)
    t = ((_WX - ax) * vx + (_WY - ay) * vy) / L2seg
    t = np.clip(t, 0.0, 1.0)
    px, py = ax + t * vx, ay + t * vy
    return (_WX - px) ** 2 + (_WY - py) ** 2 <= thick * thick


def _triangle_mask(c, size) -> np.ndarray:
    # upward-pointing triangle via three half-plane tests
    verts = [
        (c[0], c[1] + size),
        (c[0] - size * 0.9, c[1] - size * 0.7),
        (c[0] + size * 0.9, c[1] - size * 0.7),
    ]
    mask = np.ones_like(_WX, dtype=bool)
    for i in range(3):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % 3]
        cross = (x1 - x0) * (_WY - y0) - (y1 - y0) * (_WX - x0)
        mask &= cross <= 1e-12
    return mask


def _object_mask(c, shape: str, size: float) -> np.ndarray:
    if shape == "circle":
        return _disc_mask(c, size)
    if shape == "square":
        return _rect_mask(c[0] - size, c[0] + size, c[1] - size, c[1] + size)
    if shape == "triangle":
        return _triangle_mask(c, size * 1.25)
    raise ValueError(f"unknown object shape {shape!r}")


def _draw_scene(img, zone_rect, obj_xy, shape, size, arm_pts, gripper) -> None:
    _paint(img, _rect_mask(*zone_rect), _C_ZONE)
    _paint(img, _object_mask(obj_xy, shape, size), _C_OBJECT)
    base, elbow, ee = arm_pts
    _paint(img, _segment_mask(base, elbow, 0.016), _C_LINK1)
    _paint(img, _segment_mask(elbow, ee, 0.016), _C_LINK2)
    _paint(img, _disc_mask(ee, 0.014 + 0.022 * gripper), _C_GRIPPER)


def _render_top(state: WorldState) -> np.ndarray:
    img = np.empty((IMG_SIZE, IMG_SIZE, 3), dtype=np.uint8)
    img[:] = _C_BG
    z = state.target_zone
    elbow, ee = forward_kinematics(state.joints)
    _draw_scene(
        img,
        (z.cx - z.half, z.cx + z.half, z.cy - z.half, z.cy + z.half),
        state.object_xy,
        state.object_shape,
        state.object_size,
        (np.asarray(ARM_BASE), elbow, ee),
        state.gripper,
    )
    return img


def _render_profile(state: WorldState, axis: int) -> np.ndarray:
    """Side (axis=0) or front (axis=1) projection with a synthetic height."""
    img = np.empty((IMG_SIZE, IMG_SIZE, 3), dtype=np.uint8)
    img[:] = _C_BG
    t1, t2 = state.joints
    hb = ARM_BASE[axis]
    base = np.array([hb, 0.1])
    elbow = base + L1 * np.array([math.cos(t1), math.sin(t1)])
    ee = elbow + L2 * np.array([math.cos(t1 + t2), math.sin(t1 + t2)])
    z = state.target_zone
    zc = (z.cx, z.cy)[axis]
    obj = ee if state.held else np.array([state.object_xy[axis], 0.12])
    _draw_scene(
        img,
        (zc - z.half, zc + z.half, 0.05, 0.11),
        obj,
        state.object_shape,
        state.object_size,
        (base, elbow, ee),
        state.gripper,
    )
    return img


def render_views(state: WorldState) -> MultiViewObservation:
    """Three RGB projections of the scene; referentially transparent."""
    views = np.stack(
        [_render_top(state), _render_profile(state, 0), _render_profile(state, 1)]
    )
    return MultiViewObservation(views=views)


# ---------------------------------------------------------------------------
# Scripted rollout


def rollout(config: ScriptConfig, seed: int, length: int) -> Episode:
    """Execute the scripted controller for ``length`` steps.

    Deterministic given (config, seed). The episode is successful iff no
    failure event is configured and the object center lies inside the
    target zone at the final step.
    """
    T = int(length)
    if T < 10:
        raise ValueError(f"episode length must be >= 10, got {T}")
    event = config.failure_event
    if event is not None and not event.trigger < T:
        raise ValueError(f"failure trigger {event.trigger} must be < episode length {T}")

    rng = np.random.default_rng(seed)
    joints = np.array(inverse_kinematics((0.5, 0.45)), dtype=np.float64)
    gripper = 1.0
    obj = np.array(config.object_start, dtype=np.float64)
    held = False

    active = list(config.waypoints)
    wp_idx = 0
    fumbled = False
    stalled = False
    retargeted = False

    proprio = np.empty((T + 1, 3), dtype=np.float32)
    views = np.empty((T + 1, 3, IMG_SIZE, IMG_SIZE, 3), dtype=np.uint8)
    progress = np.empty(T + 1, dtype=np.float64)

    for t in range(T + 1):
        state = WorldState(
            joints=(float(joints[0]), float(joints[1])),
            gripper=float(gripper),
            object_xy=(float(obj[0]), float(obj[1])),
            target_zone=config.target_zone,
            held=held,
            object_shape=config.object_shape,
            object_size=config.object_size,
        )
        proprio[t, :2] = joints
        proprio[t, 2] = gripper
        views[t] = render_views(state).views
        progress[t] = wp_idx / max(1, len(active))
        if t == T:
            break

        # activate any failure event on the transition into step t+1
        if event is not None and t + 1 >= event.trigger:
            if event.kind == "drop":
                fumbled = True
            elif event.kind == "stall":
                stalled = True
            elif event.kind == "misplace" and not retargeted:
                retargeted = True
                keep = active[:wp_idx]
                # finish the pick first if it has not happened yet
                if wp_idx < 2:
                    keep = keep + active[wp_idx:2]
                active = keep + list(config.alt_waypoints)

        if stalled:
            droop = np.clip(np.asarray(_REST_POSE) - joints, -_STALL_DROOP, _STALL_DROOP)
            joints = joints + droop
        else:
            wp = active[min(wp_idx, len(active) - 1)]
            step = np.clip(np.asarray(wp.joints) - joints, -config.speed, config.speed)
            joints = joints + step + config.noise_scale * rng.standard_normal(2)
            dg = float(np.clip(wp.gripper - gripper, -config.grip_speed, config.grip_speed))
            gripper = gripper + dg
            if fumbled:
                gripper = 1.0
            if wp_idx < len(active):
                reached = np.max(np.abs(joints - np.asarray(wp.joints))) < _WAYPOINT_TOL
                if reached and abs(gripper - wp.gripper) < _GRIP_TOL:
                    wp_idx += 1
        joints = np.clip(joints, -math.pi, math.pi)
        gripper = float(np.clip(gripper, 0.0, 1.0))

        _, ee = forward_kinematics(joints)
        if held and gripper > _GRIP_OPEN:
            held = False
        elif (
            not held
            and not fumbled
            and gripper < _GRIP_CLOSE
            and float(np.hypot(*(ee - obj))) <= _PICK_RADIUS
        ):
            held = True
        if held:
            obj = ee.copy()
        obj = np.clip(obj, 0.0, 1.0)

    success = bool(event is None and config.target_zone.contains(obj))
    meta = {
        "progress": [float(p) for p in progress],
        "failure_event": None if event is None else {"kind": event.kind, "trigger": event.trigger},
        "shape": config.object_shape,
    }
    return Episode(
        proprio=proprio,
        views=views,
        success=success,
        task_id=config.task_id,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# Corpus generation


@dataclass(frozen=True)
class CorpusConfig:
    """Sampling grid for corpus generation; the OOD variant overrides the
    object shape/size and zone size."""

    kinds: tuple[str, ...] = FAILURE_KINDS
    trigger_fracs: tuple[float, ...] = (0.15, 0.20, 0.25, 0.30)
    length_range: tuple[int, int] = (60, 140)
    noise_scale: float = 0.004
    object_shape: str = "circle"
    object_size: float = 0.03
    zone_half: float = 0.07


def _sample_reachable(rng: np.random.Generator, min_dist_from=None) -> tuple[float, float]:
    while True:
        x = rng.uniform(0.12, 0.88)
        y = rng.uniform(0.22, 0.72)
        r = math.hypot(x - ARM_BASE[0], y - ARM_BASE[1])
        if not 0.16 <= r <= 0.45:
            continue
        if min_dist_from is not None and math.hypot(x - min_dist_from[0], y - min_dist_from[1]) < 0.22:
            continue
        return (x, y)


def plan_pick_place(
    rng: np.random.Generator, T: int, corpus: CorpusConfig
) -> ScriptConfig:
    """Sample a scene and plan waypoints paced to finish around 0.75 T."""
    obj = _sample_reachable(rng)
    zone_c = _sample_reachable(rng, min_dist_from=obj)
    decoy = _sample_reachable(rng, min_dist_from=zone_c)
    mid = ((obj[0] + zone_c[0]) / 2, (obj[1] + zone_c[1]) / 2)

    wp_obj = inverse_kinematics(obj)
    wp_mid = inverse_kinematics(mid)
    wp_zone = inverse_kinematics(zone_c)
    home = inverse_kinematics((0.5, 0.45))
    waypoints = [
        Waypoint(wp_obj, 1.0),
        Waypoint(wp_obj, 0.15),
        Waypoint(wp_mid, 0.15),
        Waypoint(wp_zone, 0.15),
        Waypoint(wp_zone, 1.0),
        Waypoint(home, 1.0),
    ]
    # decoy tail on the opposite elbow branch
    mid_alt = inverse_kinematics(((obj[0] + decoy[0]) / 2, (obj[1] + decoy[1]) / 2), -1)
    alt = [
        Waypoint(mid_alt, 0.15),
        Waypoint(inverse_kinematics(decoy, -1), 0.15),
        Waypoint(inverse_kinematics(decoy, -1), 1.0),
        Waypoint(inverse_kinematics((0.5, 0.45), -1), 1.0),
    ]

    travel = 0.0
    prev = np.array(inverse_kinematics((0.5, 0.45)))
    for wp in waypoints:
        travel += float(np.max(np.abs(np.asarray(wp.joints) - prev)))
        prev = np.asarray(wp.joints)
    grip_steps = 12  # two full open<->close transitions at grip_speed 0.2
    # pace the script to finish around 0.8 T, leaving settle margin
    speed = max(0.01, travel / max(8.0, 0.8 * T - grip_steps))

    return ScriptConfig(
        waypoints=waypoints,
        object_start=obj,
        target_zone=Box(zone_c[0], zone_c[1], corpus.zone_half),
        noise_scale=corpus.noise_scale,
        alt_waypoints=alt,
        object_shape=corpus.object_shape,
        object_size=corpus.object_size,
        speed=speed,
        task_id=f"pick_place:{corpus.object_shape}",
    )


def generate_corpus(
    n_success: int,
    n_failure: int,
    seed: int,
    length: int | tuple[int, int] | None = None,
    corpus: CorpusConfig | None = None,
) -> list[Episode]:
    """Generate labeled episodes with exactly the requested outcome counts.

    Each episode gets its own RNG stream derived from (seed, index).
    Scenes whose base script fails geometrically are resampled, so every
    failure episode is a counterfactually-successful script broken by its
    injected event. Deterministic given (seed, counts, corpus).
    """
    if n_success < 0 or n_failure < 0:
        raise ValueError("episode counts must be non-negative")
    corpus = corpus or CorpusConfig()
    episodes: list[Episode] = []
    for i in range(n_success + n_failure):
        want_failure = i >= n_success
        rng = np.random.default_rng([seed, i])
        if length is None:
            T = int(rng.integers(corpus.length_range[0], corpus.length_range[1] + 1))
        elif isinstance(length, tuple):
            T = int(rng.integers(length[0], length[1] + 1))
        else:
            T = int(length)

        for _attempt in range(50):
            cfg = plan_pick_place(rng, T, corpus)
            roll_seed = int(rng.integers(2**63))
            base = rollout(cfg, roll_seed, T)
            if base.success:
                break
        else:
            raise RuntimeError(f"could not script a successful base episode for index {i}")

        if want_failure:
            kind = corpus.kinds[int(rng.integers(len(corpus.kinds)))]
            frac = corpus.trigger_fracs[int(rng.integers(len(corpus.trigger_fracs)))]
            ev = FailureEvent(kind=kind, trigger=max(1, int(round(frac * T))))
            episodes.append(rollout(replace(cfg, failure_event=ev), roll_seed, T))
        else:
            episodes.append(base)
    return episodes


def load_script_config(path: str | Path) -> ScriptConfig:
    return ScriptConfig.from_json(Path(path).read_text())
