import json

import numpy as np
import pytest

from flowval.episodes import (
    DatasetError,
    Episode,
    read_dataset,
    sample_tuple,
    write_dataset,
)
from flowval.returns import RewardSchedule, reward


def random_episode(rng, T=10, d_q=4, hw=8, **kwargs):
    return Episode(
        proprio=rng.standard_normal((T + 1, d_q)).astype(np.float32),
        views=rng.integers(0, 256, size=(T + 1, 3, hw, hw, 3), dtype=np.uint8),
        success=bool(rng.integers(2)),
        task_id=kwargs.pop("task_id", "synthetic"),
        meta=kwargs.pop("meta", {"shape": "circle"}),
    )


def test_manifest_counts(tmp_path):
    rng = np.random.default_rng(0)
    manifest = write_dataset([random_episode(rng), random_episode(rng)], tmp_path)
    assert manifest["n_episodes"] == 2
    assert manifest["n_steps"] == 22
    assert manifest["d_q"] == 4


def test_empty_dataset_rejected(tmp_path):
    with pytest.raises(DatasetError, match="empty dataset"):
        write_dataset([], tmp_path)


def test_heterogeneous_rejected(tmp_path):
    rng = np.random.default_rng(1)
    eps = [random_episode(rng, d_q=4), random_episode(rng, d_q=5)]
    with pytest.raises(DatasetError, match="dimensionally inconsistent"):
        write_dataset(eps, tmp_path)


def test_round_trip_50_random_episodes(tmp_path):
    rng = np.random.default_rng(2)
    eps = [random_episode(rng, T=int(rng.integers(1, 12))) for _ in range(50)]
    write_dataset(eps, tmp_path)
    loaded = read_dataset(tmp_path)
    assert len(loaded) == 50
    for a, b in zip(eps, loaded):
        # byte-wise equality of every array, plus all scalar fields
        assert a.proprio.tobytes() == b.proprio.tobytes()
        assert a.views.tobytes() == b.views.tobytes()
        assert a.success == b.success
        assert a.task_id == b.task_id
        assert a.meta == b.meta


def test_rewrite_is_byte_identical(tmp_path):
    rng = np.random.default_rng(3)
    eps = [random_episode(rng) for _ in range(3)]
    d1, d2 = tmp_path / "a", tmp_path / "b"
    write_dataset(eps, d1)
    write_dataset(eps, d2)
    for f1 in sorted(d1.rglob("*")):
        if f1.is_file():
            f2 = d2 / f1.relative_to(d1)
            assert f1.read_bytes() == f2.read_bytes()


def test_corrupted_step_file(tmp_path):
    rng = np.random.default_rng(4)
    write_dataset([random_episode(rng)], tmp_path)
    victim = tmp_path / "ep_0000" / "view2.u8"
    raw = bytearray(victim.read_bytes())
    raw[0] ^= 0xFF
    victim.write_bytes(bytes(raw))
    with pytest.raises(DatasetError, match="view2.u8"):
        read_dataset(tmp_path)


def test_unknown_manifest_version(tmp_path):
    rng = np.random.default_rng(5)
    write_dataset([random_episode(rng)], tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DatasetError, match="version"):
        read_dataset(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetError, match="missing manifest"):
        read_dataset(tmp_path / "nope")


def test_truncated_file(tmp_path):
    rng = np.random.default_rng(6)
    write_dataset([random_episode(rng)], tmp_path)
    victim = tmp_path / "ep_0000" / "proprio.f32"
    raw = victim.read_bytes()[:-8]
    victim.write_bytes(raw)
    # checksum catches the truncation first; either error names the file
    with pytest.raises(DatasetError, match="proprio.f32"):
        read_dataset(tmp_path)


def make_episode(T, success, d_q=3):
    rng = np.random.default_rng(T)
    ep = random_episode(rng, T=T, d_q=d_q)
    ep.success = success
    return ep


def test_sample_tuple_clamping():
    ep = make_episode(100, True)
    tup = sample_tuple(ep, 80, 50)
    assert np.array_equal(tup.future_proprio.values, ep.proprio[100])
    tup = sample_tuple(ep, 0, 50)
    assert np.array_equal(tup.future_proprio.values, ep.proprio[50])


def test_sample_tuple_return_target():
    ep = make_episode(100, True)
    assert sample_tuple(ep, 25, 50).return_target == pytest.approx(0.75)


def test_sample_tuple_deterministic_and_validated():
    ep = make_episode(30, False)
    a = sample_tuple(ep, 7, 11)
    b = sample_tuple(ep, 7, 11)
    assert a.return_target == b.return_target
    assert np.array_equal(a.current.proprio.values, b.current.proprio.values)
    with pytest.raises(ValueError):
        sample_tuple(ep, 31, 5)
    with pytest.raises(ValueError):
        sample_tuple(ep, 5, 0)


def test_sample_tuple_matches_reward_sum_oracle():
    rng = np.random.default_rng(7)
    for _ in range(25):
        T = int(rng.integers(2, 40))
        ep = make_episode(T, bool(rng.integers(2)))
        t = int(rng.integers(0, T + 1))
        sched = RewardSchedule(T=T, success=ep.success)
        brute = sum(reward(sched, k) for k in range(t, T + 1))
        assert abs(sample_tuple(ep, t, 10).return_target - brute) < 1e-9


def test_episode_validation():
    rng = np.random.default_rng(8)
    with pytest.raises(ValueError):
        Episode(
            proprio=rng.standard_normal((5, 3)).astype(np.float32),
            views=rng.integers(0, 255, size=(4, 3, 8, 8, 3), dtype=np.uint8),
            success=True,
            task_id="x",
        )
    bad = rng.standard_normal((5, 3)).astype(np.float32)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        Episode(
            proprio=bad,
            views=rng.integers(0, 255, size=(5, 3, 8, 8, 3), dtype=np.uint8),
            success=True,
            task_id="x",
        )
