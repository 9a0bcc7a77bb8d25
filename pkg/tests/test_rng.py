"""Determinism and distribution checks for the SplitMix64 counter stream."""

import numpy as np

from jdx.rng import Rng, _mix64


def test_same_seed_same_stream():
    a = Rng(1234)
    b = Rng(1234)
    assert [a.next_u64() for _ in range(64)] == [b.next_u64() for _ in range(64)]


def test_different_seeds_differ():
    a = [Rng(1).next_u64() for _ in range(8)]
    b = [Rng(2).next_u64() for _ in range(8)]
    assert a != b


def test_chunking_invariance():
    # Counter mode: one vectorized block equals the same draws taken one at a time.
    whole = Rng(99).fill_uniform(257)
    r = Rng(99)
    singles = np.array([r.uniform() for _ in range(257)])
    assert np.array_equal(whole, singles)


def test_mix64_reference_values():
    # Canonical SplitMix64 outputs for state 0 (first two calls of the
    # reference implementation, which advances by gamma before mixing).
    gamma = np.uint64(0x9E3779B97F4A7C15)
    assert int(_mix64(gamma)) == 0xE220A8397B1DCDAF
    with np.errstate(over="ignore"):
        second = _mix64(gamma + gamma)
    assert int(second) == 0x6E789E6AA1B965F4
    # Counter draw i of a stream is mix64(seed + i * gamma), so the stream
    # for seed 0 contains the reference sequence from its second draw on.
    r = Rng(0)
    r.next_u64()
    assert r.next_u64() == 0xE220A8397B1DCDAF


def test_uniform_range_and_moments():
    u = Rng(7).fill_uniform(200_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005
    assert abs(u.var() - 1.0 / 12.0) < 0.002


def test_uniform_bounds_scaling():
    u = Rng(3).uniform(-2.0, 5.0, shape=(1000,))
    assert u.min() >= -2.0 and u.max() < 5.0


def test_normal_moments():
    z = Rng(11).normal(shape=200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01
    # Third moment of a symmetric law stays near zero.
    assert abs((z**3).mean()) < 0.05


def test_normal_scalar_and_shape():
    assert isinstance(Rng(5).normal(), float)
    assert Rng(5).normal(shape=(3, 4)).shape == (3, 4)


def test_randint_covers_range():
    r = Rng(13)
    draws = {r.randint(5) for _ in range(500)}
    assert draws == {0, 1, 2, 3, 4}


def test_choice_weighted_frequency():
    r = Rng(17)
    counts = {"a": 0, "b": 0}
    for _ in range(20_000):
        counts[r.choice(["a", "b"], weights=[0.8, 0.2])] += 1
    assert abs(counts["a"] / 20_000 - 0.8) < 0.02


def test_shuffle_is_permutation():
    r = Rng(23)
    items = list(range(100))
    shuffled = list(items)
    r.shuffle(shuffled)
    assert shuffled != items
    assert sorted(shuffled) == items


def test_spawn_streams_are_independent_and_stable():
    root = Rng(42)
    a1 = root.spawn("alpha").fill_uniform(16)
    b1 = root.spawn("beta").fill_uniform(16)
    # Spawning again with the same key reproduces the substream even after
    # the parent has consumed draws.
    root.fill_uniform(10)
    a2 = root.spawn("alpha").fill_uniform(16)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b1)


def test_spawn_key_sensitivity():
    root = Rng(0)
    keys = [f"sample/{i}" for i in range(200)]
    firsts = {root.spawn(k).next_u64() for k in keys}
    assert len(firsts) == 200
