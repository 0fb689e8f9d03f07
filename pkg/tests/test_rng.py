import numpy as np
import pytest
from scipy import stats

from mlmc_evidence.rng import Purpose, Rng, StreamKey, child_seed, derive_stream


def test_same_key_same_sequence():
    k = StreamKey(seed=12345, purpose=Purpose.INNER_SAMPLE, level=3, index=42)
    a = derive_stream(k)
    b = derive_stream(k)
    assert np.array_equal(a.uniform(100), b.uniform(100))
    assert np.array_equal(derive_stream(k).normal(100), derive_stream(k).normal(100))


def test_key_fields_change_stream():
    base = StreamKey(1, Purpose.DATA_DRAW, 0, 0)
    ref = derive_stream(base).uniform(8)
    for other in [
        StreamKey(2, Purpose.DATA_DRAW, 0, 0),
        StreamKey(1, Purpose.INNER_SAMPLE, 0, 0),
        StreamKey(1, Purpose.DATA_DRAW, 1, 0),
        StreamKey(1, Purpose.DATA_DRAW, 0, 1),
    ]:
        assert not np.array_equal(ref, derive_stream(other).uniform(8))


def test_adjacent_index_streams_uncorrelated():
    n = 100_000
    first = np.empty(n)
    second = np.empty(n)
    for i in range(n):
        first[i] = derive_stream(StreamKey(9, Purpose.INNER_SAMPLE, 0, 2 * i)).uniform()
        second[i] = derive_stream(StreamKey(9, Purpose.INNER_SAMPLE, 0, 2 * i + 1)).uniform()
    r = np.corrcoef(first, second)[0, 1]
    assert abs(r) < 0.01


def test_uniform_mean():
    u = derive_stream(StreamKey(7, Purpose.INIT, 0, 0)).uniform(1_000_000)
    assert abs(u.mean() - 0.5) < 0.002


def test_normal_passes_ks():
    z = derive_stream(StreamKey(11, Purpose.INNER_SAMPLE, 0, 0)).normal(100_000)
    _, p = stats.kstest(z, "norm")
    assert p > 0.001


def test_open_uniform_strictly_inside():
    u = derive_stream(StreamKey(3, Purpose.INIT, 0, 0)).open_uniform(100_000)
    assert u.min() > 0.0 and u.max() < 1.0


def test_indices_in_range():
    idx = derive_stream(StreamKey(5, Purpose.DATA_DRAW, 0, 0)).indices(17, 10_000)
    assert idx.min() >= 0 and idx.max() <= 16
    # all values reachable
    assert len(np.unique(idx)) == 17


def test_rng_salt_packing():
    rng = Rng(seed=1, salt=3)
    a = rng.stream(Purpose.DATA_DRAW, level=0, index=4).uniform(4)
    b = Rng(1, 3).stream(Purpose.DATA_DRAW, level=0, index=4).uniform(4)
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        rng.stream(Purpose.DATA_DRAW, index=1 << 32)
    with pytest.raises(ValueError):
        Rng(1, 1 << 32).stream(Purpose.DATA_DRAW)


def test_child_seeds_distinct():
    seeds = {child_seed(0, t) for t in range(1000)}
    seeds |= {child_seed(0, t, u) for t in range(30) for u in range(30)}
    assert len(seeds) == 1900
