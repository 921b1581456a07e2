import math

import numpy as np
import pytest

from flowval.sim import (
    ARM_BASE,
    IMG_SIZE,
    Box,
    CorpusConfig,
    FailureEvent,
    ScriptConfig,
    WorldState,
    forward_kinematics,
    generate_corpus,
    inverse_kinematics,
    plan_pick_place,
    render_views,
    rollout,
)
from dataclasses import replace


def base_config(noise=0.004, seed=0, T=90):
    rng = np.random.default_rng(seed)
    cfg = plan_pick_place(rng, T, CorpusConfig(noise_scale=noise))
    return cfg, T


def test_ik_fk_consistency():
    rng = np.random.default_rng(0)
    for _ in range(50):
        target = (rng.uniform(0.2, 0.8), rng.uniform(0.25, 0.5))
        r = math.hypot(target[0] - ARM_BASE[0], target[1] - ARM_BASE[1])
        if not 0.16 <= r <= 0.45:
            continue
        for sign in (1, -1):
            joints = inverse_kinematics(target, sign)
            _, ee = forward_kinematics(joints)
            assert np.hypot(*(ee - np.asarray(target))) < 1e-9


def test_zero_noise_scripted_success():
    cfg, T = base_config(noise=0.0)
    ep = rollout(cfg, seed=1, length=T)
    assert ep.success is True
    assert ep.T == T
    assert ep.proprio.shape == (T + 1, 3)


def test_rollout_deterministic():
    cfg, T = base_config()
    a = rollout(cfg, seed=5, length=T)
    b = rollout(cfg, seed=5, length=T)
    assert np.array_equal(a.proprio, b.proprio)
    assert np.array_equal(a.views, b.views)
    assert a.success == b.success
    assert a.meta == b.meta


def test_short_episode_rejected():
    cfg, _ = base_config()
    with pytest.raises(ValueError):
        rollout(cfg, seed=0, length=9)


def test_drop_failure_diverges():
    cfg, T = base_config()
    clean = rollout(cfg, seed=2, length=T)
    assert clean.success
    trigger = int(0.25 * T)
    ev = FailureEvent(kind="drop", trigger=trigger)
    broken = rollout(replace(cfg, failure_event=ev), seed=2, length=T)
    assert broken.success is False
    assert broken.meta["failure_event"] == {"kind": "drop", "trigger": trigger}
    # identical up to the trigger, diverging after it
    assert np.array_equal(broken.proprio[:trigger], clean.proprio[:trigger])
    assert not np.array_equal(broken.views[-1], clean.views[-1])


def test_failure_event_flips_success_for_all_kinds():
    cfg, T = base_config(seed=3)
    clean = rollout(cfg, seed=7, length=T)
    assert clean.success
    for kind in ("drop", "misplace", "stall"):
        ev = FailureEvent(kind=kind, trigger=int(0.3 * T))
        broken = rollout(replace(cfg, failure_event=ev), seed=7, length=T)
        assert broken.success is False, kind


def test_stall_freezes_with_droop():
    cfg, T = base_config(seed=4)
    trigger = int(0.3 * T)
    ep = rollout(replace(cfg, failure_event=FailureEvent("stall", trigger)), seed=9, length=T)
    post = ep.proprio[trigger:, :2]
    # joints drift monotonically toward the rest pose, gripper frozen
    drift = np.abs(np.diff(post, axis=0))
    assert drift.max() <= 0.012 + 1e-6
    assert np.all(np.diff(np.abs(post), axis=0) <= 1e-6)
    grip = ep.proprio[trigger:, 2]
    assert np.all(grip == grip[0])


def test_invalid_event_validation():
    with pytest.raises(ValueError):
        FailureEvent(kind="meltdown", trigger=10)
    cfg, T = base_config()
    with pytest.raises(ValueError):
        rollout(replace(cfg, failure_event=FailureEvent("drop", T + 1)), seed=0, length=T)


def test_progress_nondecreasing_and_complete():
    eps = generate_corpus(3, 0, seed=10)
    for ep in eps:
        prog = ep.meta["progress"]
        assert all(b - a >= 0 for a, b in zip(prog, prog[1:]))
        assert prog[-1] == 1.0


def test_render_purity_and_object_sensitivity():
    zone = Box(0.7, 0.5, 0.07)
    state = WorldState((1.2, 0.5), 0.8, (0.3, 0.4), zone, held=False)
    a = render_views(state)
    b = render_views(state)
    assert np.array_equal(a.views, b.views)
    moved = WorldState((1.2, 0.5), 0.8, (0.4, 0.4), zone, held=False)
    c = render_views(moved)
    assert not np.array_equal(a.views[0], c.views[0])  # top view differs


def test_render_object_overlaps_zone_by_projection_math():
    # object exactly at zone center: compute the zone-center pixel by hand
    # from the renderer's world->pixel mapping and check the object paints it
    zone = Box(0.6, 0.4, 0.07)
    state = WorldState((2.6, 1.2), 1.0, (0.6, 0.4), zone, held=False)
    top = render_views(state).views[0]
    col = int(zone.cx * IMG_SIZE)  # pixel centers at (j + 0.5) / S
    row = int((1.0 - zone.cy) * IMG_SIZE)
    object_color = np.array([205, 60, 50])
    assert np.array_equal(top[row, col], object_color)
    # and zone pixels away from the object remain zone-colored
    edge_col = int((zone.cx - 0.06) * IMG_SIZE)
    assert np.array_equal(top[row, edge_col], np.array([40, 110, 40]))


def test_generate_corpus_counts_and_determinism():
    eps = generate_corpus(4, 3, seed=7, length=(60, 80))
    assert len(eps) == 7
    assert sum(e.success for e in eps) == 4
    assert all(60 <= e.T <= 80 for e in eps)
    again = generate_corpus(4, 3, seed=7, length=(60, 80))
    for a, b in zip(eps, again):
        assert np.array_equal(a.views, b.views)
        assert np.array_equal(a.proprio, b.proprio)


def test_generate_corpus_failure_only():
    eps = generate_corpus(0, 5, seed=8, length=60)
    assert len(eps) == 5
    assert all(not e.success for e in eps)
    assert all(e.meta["failure_event"] is not None for e in eps)


def test_corpus_config_variant():
    eps = generate_corpus(2, 0, seed=9, length=60, corpus=CorpusConfig(object_shape="triangle"))
    assert all(e.meta["shape"] == "triangle" for e in eps)
    assert all(e.task_id == "pick_place:triangle" for e in eps)


def test_joint_bounds_invariant():
    eps = generate_corpus(2, 2, seed=12, length=70)
    for ep in eps:
        assert np.all(np.abs(ep.proprio[:, :2]) <= math.pi + 1e-9)
        assert np.all(ep.proprio[:, 2] >= 0.0) and np.all(ep.proprio[:, 2] <= 1.0)


def test_script_config_json_round_trip():
    cfg, _ = base_config(seed=13)
    cfg = replace(cfg, failure_event=FailureEvent("stall", 20))
    back = ScriptConfig.from_json(cfg.to_json())
    assert back == cfg
