import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randpol.normalize import RewardScaler, RunningMeanStd, normalize_obs, normalize_reward, rms_update


def test_single_sample():
    s = rms_update(RunningMeanStd((2,)), np.array([[3.0, -1.0]]))
    assert np.array_equal(s.mean, [3.0, -1.0]) and np.array_equal(s.var, [0.0, 0.0])


def test_one_two_three():
    s = rms_update(RunningMeanStd(()), np.array([1.0, 2.0, 3.0]))
    assert s.mean == 2.0 and s.var == pytest.approx(2 / 3, rel=1e-15)


def test_streaming_matches_two_pass(rng):
    x = rng.normal(5.0, 3.0, size=(10_000, 4))
    s = RunningMeanStd((4,))
    i = 0
    while i < len(x):
        k = int(rng.integers(1, 300))
        s.update(x[i:i + k])
        i += k
    mean = x.sum(0) / len(x)
    var = ((x - mean) ** 2).sum(0) / len(x)
    np.testing.assert_allclose(s.mean, mean, rtol=0, atol=1e-10)
    np.testing.assert_allclose(s.var, var, rtol=0, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 50), st.integers(1, 50))
def test_merge_equals_concatenation(seed, n1, n2):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(n1, 3)) * 7, r.normal(size=(n2, 3)) + 2
    merged = RunningMeanStd((3,)).update(a).merge(RunningMeanStd((3,)).update(b))
    whole = RunningMeanStd((3,)).update(np.vstack([a, b]))
    np.testing.assert_allclose(merged.mean, whole.mean, atol=1e-12)
    np.testing.assert_allclose(merged.var, whole.var, atol=1e-12)


def test_normalize_identity_and_constant():
    s = RunningMeanStd((2,))
    s.count, s.mean, s.m2 = 10.0, np.zeros(2), np.full(2, 10.0)
    x = np.array([0.7, -1.3])
    np.testing.assert_allclose(normalize_obs(s, x), x, rtol=1e-7)
    c = RunningMeanStd((2,)).update(np.tile([4.0, -2.0], (50, 1)))
    np.testing.assert_allclose(normalize_obs(c, np.array([4.0, -2.0])), 0.0)


def test_clip_engages_only_beyond_ten_sigma():
    s = RunningMeanStd(())
    s.count, s.mean, s.m2 = 100.0, 1.0, 400.0   # std 2
    assert normalize_obs(s, 1.0 + 2 * 9.5) == pytest.approx(9.5, rel=1e-8)
    assert normalize_obs(s, 1.0 + 2 * 12) == 10.0
    assert normalize_obs(s, 1.0 - 2 * 12) == -10.0


def test_frozen_stats_fixed_map(rng):
    s = RunningMeanStd((3,)).update(rng.normal(size=(100, 3)))
    s.frozen = True
    x = rng.normal(size=3)
    before = normalize_obs(s, x)
    s.update(rng.normal(size=(100, 3)) * 50)
    assert np.array_equal(before, normalize_obs(s, x))


def test_state_round_trip(rng):
    s = RunningMeanStd((3,)).update(rng.normal(size=(20, 3)))
    t = RunningMeanStd((3,))
    t.load_state(s.state())
    assert np.array_equal(t.mean, s.mean) and np.array_equal(t.var, s.var) and t.count == s.count
    with pytest.raises(ValueError):
        t.load_state(np.zeros(4))


def test_reward_scaler_scale_only(rng):
    sc = RewardScaler(2, 0.9)
    rets = np.zeros(2)
    oracle = RunningMeanStd(())
    for t in range(30):
        r = rng.normal(size=2) + 1
        d = rng.random(2) < 0.2
        out = sc(r, d)
        rets = rets * 0.9 + r
        oracle.update(rets)
        rets[d] = 0
        np.testing.assert_allclose(out, r / np.sqrt(oracle.var + 1e-8), rtol=1e-12)
    # sign preserved: no centering
    assert np.all(np.sign(sc(np.array([0.5, -0.5]), np.zeros(2, bool))) == [1, -1])
    assert normalize_reward(oracle, 0.0) == 0.0
