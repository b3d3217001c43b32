import numpy as np
import pytest

from tailgnn.rng import Xoshiro256pp, _splitmix64


def test_splitmix64_reference_vectors():
    # first outputs for seed 0 from the canonical C implementation
    s, v = _splitmix64(0)
    assert v == 0xE220A8397B1DCDAF
    s, v = _splitmix64(s)
    assert v == 0x6E789E6AA1B965F4


def test_stream_pinned_for_cross_version_stability():
    # the synthetic-corpus generator depends on these exact values being
    # identical on every platform and Python/numpy version
    r = Xoshiro256pp(42)
    assert [r.next_u64() for r_ in range(4)] == [
        15021278609987233951, 5881210131331364753,
        18149643915985481100, 12933668939759105464]


def test_determinism_and_seed_sensitivity():
    a = [Xoshiro256pp(7).next_u64() for _ in range(10)]
    b = [Xoshiro256pp(7).next_u64() for _ in range(10)]
    c = [Xoshiro256pp(8).next_u64() for _ in range(10)]
    assert a == b
    assert a != c


def test_uniform_range_and_moments():
    r = Xoshiro256pp(1)
    xs = np.array([r.uniform() for _ in range(20000)])
    assert np.all((xs >= 0.0) & (xs < 1.0))
    assert abs(xs.mean() - 0.5) < 0.01
    assert abs(xs.var() - 1.0 / 12.0) < 0.005


def test_randint_bounds_and_uniformity():
    r = Xoshiro256pp(2)
    n = 7
    counts = np.zeros(n)
    for _ in range(14000):
        v = r.randint(n)
        assert 0 <= v < n
        counts[v] += 1
    # chi-squared against uniform: 6 dof, 99.9th percentile ~22.5
    expected = 14000 / n
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < 22.5


def test_randint_invalid():
    with pytest.raises(ValueError):
        Xoshiro256pp(0).randint(0)


def test_geometric_mean_two():
    r = Xoshiro256pp(3)
    xs = [r.geometric(0.5) for _ in range(20000)]
    assert min(xs) == 1
    assert abs(np.mean(xs) - 2.0) < 0.05


def test_sample_distinct_and_in_range():
    r = Xoshiro256pp(4)
    for _ in range(200):
        out = r.sample(10, 6)
        assert len(out) == len(set(out)) == 6
        assert all(0 <= v < 10 for v in out)
    with pytest.raises(ValueError):
        r.sample(3, 4)


def test_shuffle_is_permutation():
    r = Xoshiro256pp(5)
    items = list(range(20))
    r.shuffle(items)
    assert sorted(items) == list(range(20))
    assert items != list(range(20))
