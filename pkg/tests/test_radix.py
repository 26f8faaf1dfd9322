import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from extsort.bench import random_keyrefs
from extsort.errors import InternalInvariantError
from extsort.radix import (BucketLayout, RadixConfig, SmallBucketQueue, SortTask, build_histogram,
                           comparison_sort_fallback, msd_radix_sort, scatter, scatter_buffered,
                           small_bucket_worker)
from extsort.records import KEYREF_DTYPE, keyref_rows, keyrefs_from_keys
from oracles import key_list, naive_tally, pad, sorted_keys

FIVE = [pad(s) for s in ("abc", "bcd", "cde", "cfe", "dfg")]


def test_histogram_five_keys():
    layout = build_histogram(keyrefs_from_keys(FIVE), 0)
    expected = {ord("a"): 1, ord("b"): 1, ord("c"): 2, ord("d"): 1}
    for b in range(256):
        assert layout.counts[b] == expected.get(b, 0)
    assert layout.non_empty() == 4


def test_histogram_empty():
    layout = build_histogram(np.empty(0, KEYREF_DTYPE), 0)
    assert not layout.counts.any() and not layout.offsets.any()


def test_histogram_matches_tally():
    kr = random_keyrefs(10_000, 1)
    assert list(build_histogram(kr, 3).counts) == naive_tally(key_list(kr), 3)


def test_histogram_depth_range():
    with pytest.raises(ValueError):
        build_histogram(random_keyrefs(4), 10)


def test_scatter_five_keys():
    kr = keyrefs_from_keys([FIVE[i] for i in (3, 0, 4, 2, 1)])
    layout = build_histogram(kr, 0)
    out = np.empty_like(kr)
    splits = scatter(kr, layout, 0, out)
    assert sorted(key_list(out)[2:4]) == [pad("cde"), pad("cfe")]
    # stable: 'cfe' arrived before 'cde' in the input
    assert key_list(out) == [pad("abc"), pad("bcd"), pad("cfe"), pad("cde"), pad("dfg")]
    ends = sorted({int(s) for s in splits if 0 < s})
    assert ends == [1, 2, 4, 5]


def test_scatter_single_bucket_is_copy():
    kr = random_keyrefs(1000, 2)
    kr["key"][:, 4] = 7
    out = np.empty_like(kr)
    scatter(kr, build_histogram(kr, 4), 4, out)
    assert out.tobytes() == kr.tobytes()


def test_scatter_permutation_and_membership():
    kr = random_keyrefs(100_000, 3)
    out = np.empty_like(kr)
    splits = scatter(kr, build_histogram(kr, 0), 0, out)
    assert sorted(out["ordinal"]) == list(range(100_000))
    for b in range(256):
        assert (out["key"][splits[b]:splits[b + 1], 0] == b).all()


def test_scatter_layout_mismatch():
    kr = random_keyrefs(100, 4)
    layout = BucketLayout.from_counts(np.zeros(256, np.int64))
    with pytest.raises(InternalInvariantError):
        scatter(kr, layout, 0, np.empty_like(kr))


@pytest.mark.parametrize("capacity", [1, 3, 16])
def test_buffered_single_worker_identical(capacity):
    kr = random_keyrefs(50_000, 5)
    layout = build_histogram(kr, 0)
    plain, buf = np.empty_like(kr), np.empty_like(kr)
    scatter(kr, layout, 0, plain)
    scatter_buffered(kr, layout, 0, buf, RadixConfig(worker_count=1, scatter_buffer_capacity=capacity))
    assert plain.tobytes() == buf.tobytes()


def test_buffered_eight_workers_bucket_multisets():
    kr = random_keyrefs(1_000_000, 6)
    layout = build_histogram(kr, 0)
    plain, buf = np.empty_like(kr), np.empty_like(kr)
    s1 = scatter(kr, layout, 0, plain)
    s2 = scatter_buffered(kr, layout, 0, buf, RadixConfig(worker_count=8))
    assert np.array_equal(s1, s2)
    for b in range(256):
        lo, hi = s1[b], s1[b + 1]
        assert np.array_equal(np.sort(plain["ordinal"][lo:hi]), np.sort(buf["ordinal"][lo:hi]))


def test_sort_degenerate_sizes():
    assert len(msd_radix_sort(np.empty(0, KEYREF_DTYPE))) == 0
    one = random_keyrefs(1, 7)
    before = one.tobytes()
    assert msd_radix_sort(one).tobytes() == before


def test_sort_five_keys():
    kr = keyrefs_from_keys(FIVE[::-1])
    assert key_list(msd_radix_sort(kr)) == FIVE


@pytest.mark.parametrize("dist", ["uniform", "skewed"])
def test_sort_matches_oracle(dist):
    kr = random_keyrefs(1_000_000, 8, dist)
    expect = np.sort(kr["key"].copy().view("S10").reshape(-1))
    out = msd_radix_sort(kr.copy(), RadixConfig(worker_count=4))
    assert np.array_equal(out["key"].copy().view("S10").reshape(-1), expect)
    assert np.array_equal(np.sort(out["ordinal"]), np.arange(len(kr), dtype=np.uint64))


@pytest.mark.parametrize("big,tiny", [(0, 0), (float("inf"), float("inf")), (0, float("inf")),
                                      (10, 2), (1000, 500)])
def test_sort_threshold_extremes(big, tiny):
    kr = random_keyrefs(20_000, 9, "skewed")
    expect = sorted_keys(kr["key"])
    out = msd_radix_sort(kr.copy(), RadixConfig(big, tiny, worker_count=3))
    assert key_list(out) == expect


def test_sort_identical_across_worker_counts():
    kr = random_keyrefs(300_000, 10, "skewed")
    kr["key"][::3] = kr["key"][0]
    outs = [msd_radix_sort(kr.copy(), RadixConfig(big_bucket_threshold=5000, worker_count=w)).tobytes()
            for w in (1, 2, 8)]
    assert outs[0] == outs[1] == outs[2]


def test_sort_stats():
    stats = {}
    msd_radix_sort(random_keyrefs(10_000, 11), RadixConfig(worker_count=1), stats=stats)
    assert stats["radix_passes"] >= 1 and stats["max_task_depth"] <= 9


@settings(max_examples=40, deadline=None)
@given(st.lists(st.binary(min_size=10, max_size=10) | st.sampled_from([b"\0" * 10, b"a" * 10]),
                max_size=400),
       st.integers(0, 70), st.integers(0, 300), st.integers(1, 4))
def test_sort_property(keys, tiny, big, workers):
    kr = keyrefs_from_keys(keys)
    out = msd_radix_sort(kr, RadixConfig(big, tiny, worker_count=workers))
    assert key_list(out) == sorted(keys)


def _queue_for(kr, aux=None):
    return SmallBucketQueue(keyref_rows(kr), keyref_rows(np.empty_like(kr) if aux is None else aux))


def test_queue_single_tiny_task():
    kr = random_keyrefs(10, 12)
    q = _queue_for(kr)
    q.put(SortTask(0, 10, 0))
    small_bucket_worker(q, RadixConfig(tiny_bucket_threshold=64))
    assert q.comparison_sorts == 1 and q.tasks_processed == 1 and q.radix_passes == 0
    assert key_list(kr) == sorted_keys(kr["key"])


def test_queue_identical_keys_stop_at_depth_ten():
    kr = random_keyrefs(500, 13)
    kr["key"][:] = 42
    before = kr.tobytes()
    q = _queue_for(kr)
    q.put(SortTask(0, 500, 0))
    small_bucket_worker(q, RadixConfig(tiny_bucket_threshold=2))
    assert q.max_depth == 9 and q.radix_passes == 10
    assert kr.tobytes() == before


def test_queue_one_vs_eight_workers():
    base = random_keyrefs(40_000, 14, "skewed")
    results = []
    for workers in (1, 8):
        # depth-1 tasks are first-octet buckets living in the auxiliary buffer
        aux = base[np.argsort(base["key"][:, 0], kind="stable")]
        kr = np.empty_like(base)
        q = _queue_for(kr, aux)
        counts = np.bincount(aux["key"][:, 0], minlength=256)
        ends = np.cumsum(counts)
        spans = np.array([[e - c, e] for c, e in zip(counts, ends) if c], np.int64)
        q.put_spans(spans, 1)
        threads = [threading.Thread(target=small_bucket_worker, args=(q, RadixConfig(tiny_bucket_threshold=32)))
                   for _ in range(workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert q.outstanding == 0
        assert key_list(kr) == sorted_keys(base["key"])
        results.append(kr.tobytes())
    assert results[0] == results[1]


def test_queue_rejects_depth_ten():
    q = _queue_for(random_keyrefs(4))
    with pytest.raises(InternalInvariantError):
        q.put(SortTask(0, 4, 10))


def test_fallback():
    one = random_keyrefs(1, 15)
    assert comparison_sort_fallback(one).tobytes() == one.tobytes()
    eq = random_keyrefs(50, 16)
    eq["key"][:] = 3
    comparison_sort_fallback(eq, 2)
    assert key_list(eq) == [bytes([3] * 10)] * 50
    rng = np.random.default_rng(17)
    for _ in range(10):
        kr = random_keyrefs(500, int(rng.integers(1 << 30)))
        kr["key"][:, :2] = 9
        comparison_sort_fallback(kr, 2)
        assert key_list(kr) == sorted_keys(kr["key"])
