import pytest
from hypothesis import given, strategies as st

from flowval.returns import RewardSchedule, margin, return_to_go, reward


def test_reward_examples():
    s = RewardSchedule(T=200, success=True)
    assert reward(s, 10) == pytest.approx(0.005)
    assert reward(s, 200) == 0.0
    assert reward(RewardSchedule(T=200, success=False), 200) == 1.0


def test_return_examples():
    s = RewardSchedule(T=100, success=True)
    assert return_to_go(s, 0) == pytest.approx(1.0)
    assert return_to_go(s, 100) == 0.0
    assert return_to_go(RewardSchedule(T=100, success=False), 50) == pytest.approx(1.5)


def test_margin_is_constant_one():
    assert margin(0, 100) == 1.0
    assert margin(100, 100) == 1.0
    assert margin(37, 81) == 1.0


def test_index_validation():
    s = RewardSchedule(T=10, success=True)
    with pytest.raises(ValueError):
        reward(s, -1)
    with pytest.raises(ValueError):
        return_to_go(s, 11)
    with pytest.raises(ValueError):
        RewardSchedule(T=0, success=True)


@given(
    T=st.integers(min_value=1, max_value=500),
    success=st.booleans(),
    data=st.data(),
)
def test_return_equals_brute_force_reward_sum(T, success, data):
    t = data.draw(st.integers(min_value=0, max_value=T))
    s = RewardSchedule(T=T, success=success)
    brute = sum(reward(s, k) for k in range(t, T + 1))
    assert abs(return_to_go(s, t) - brute) < 1e-9


@given(T=st.integers(min_value=2, max_value=300), success=st.booleans())
def test_return_strictly_decreasing(T, success):
    s = RewardSchedule(T=T, success=success)
    vals = [return_to_go(s, t) for t in range(T + 1)]
    diffs = [a - b for a, b in zip(vals, vals[1:])]
    assert all(d > 0 for d in diffs)
    assert all(abs(d - 1.0 / T) < 1e-12 for d in diffs)


@given(T=st.integers(min_value=1, max_value=300), data=st.data())
def test_return_ranges(T, data):
    t = data.draw(st.integers(min_value=0, max_value=T))
    assert 0.0 <= return_to_go(RewardSchedule(T=T, success=True), t) <= 1.0
    assert 1.0 <= return_to_go(RewardSchedule(T=T, success=False), t) <= 2.0
