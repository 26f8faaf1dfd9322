import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from extsort import pipeline as P
from extsort.errors import ConfigurationError, DataIntegrityError, MalformedInputError, StageError
from extsort.genval import GenSpec, generate, generate_block, validate
from extsort.merge import kway_merge_order, merge_partition
from extsort.pipeline import (MERGE_BYTES_PER_RECORD, MergePartition, RunDescriptor, SortConfig,
                              balance_partitions, estimate_internal_peak, execute_external,
                              form_runs, locate_partitions, plan, sample_splitters, sort_file,
                              sort_internal)
from oracles import is_ordered, linear_partition_counts, multiset, pad, random_records

GB = 10**9


def sorted_records(recs):
    return recs[np.argsort(recs[:, :10].copy().view("S10").ravel(), kind="stable")]


def write_run(path, keys):
    recs = np.zeros((len(keys), 100), np.uint8)
    if keys:
        recs[:, :10] = np.frombuffer(b"".join(keys), np.uint8).reshape(-1, 10)
    Path(path).write_bytes(recs.tobytes())
    return RunDescriptor(str(path), len(keys), keys[0] if keys else b"", keys[-1] if keys else b"")


# -- plan ---------------------------------------------------------------------

def test_plan_ten_gb_internal():
    assert plan(10 * GB, 30 * GB).mode == "internal"


def test_plan_sixty_gb_external():
    p = plan(60 * GB, 30 * GB)
    assert p.mode == "external"
    assert p.run_records * P.RUN_BYTES_PER_RECORD <= 30 * GB // 2
    assert 60 * GB // 100 * MERGE_BYTES_PER_RECORD / p.partition_count <= 30 * GB // 2


def test_plan_boundary():
    cfg = SortConfig()
    edge = estimate_internal_peak(10_000, cfg)
    assert edge == 10_000 * 136 + 4 * 262_144
    assert plan(1_000_000, edge, cfg).mode == "internal"
    assert plan(1_000_000, edge - 1, cfg).mode == "external"


def test_plan_errors():
    with pytest.raises(MalformedInputError):
        plan(150, 1 << 30)
    with pytest.raises(ConfigurationError):
        plan(100, 1 << 20 - 1)
    with pytest.raises(ConfigurationError):
        plan(10**9, 1 << 24, SortConfig(mode="internal"))


@settings(max_examples=200)
@given(st.integers(0, 10**9), st.integers(1 << 20, 1 << 34), st.integers(1 << 20, 1 << 34))
def test_plan_monotone(records, b1, b2):
    lo, hi = sorted((b1, b2))
    if plan(records * 100, hi).mode == "external":
        assert plan(records * 100, lo).mode == "external"


# -- internal -----------------------------------------------------------------

def test_internal_random(tmp_path):
    generate(GenSpec(100_000, seed=1), tmp_path / "in")
    cfg = SortConfig(memory_budget=1 << 28)
    p = plan(os.path.getsize(tmp_path / "in"), cfg.memory_budget, cfg)
    report = sort_internal(tmp_path / "in", tmp_path / "out", p, cfg)
    a, b = validate(tmp_path / "in"), validate(tmp_path / "out")
    assert b.ordered and a.checksum == b.checksum and b.record_count == 100_000
    assert report.mode == "internal" and report.extras["pool_peak"] <= cfg.memory_budget


def test_internal_sorted_input_unchanged(tmp_path):
    rng = np.random.default_rng(2)
    recs = sorted_records(random_records(rng, 5000))
    (tmp_path / "in").write_bytes(recs.tobytes())
    sort_file(tmp_path / "in", tmp_path / "out", SortConfig(memory_budget=1 << 26))
    assert (tmp_path / "out").read_bytes() == recs.tobytes()


def test_internal_empty(tmp_path):
    (tmp_path / "in").write_bytes(b"")
    r = sort_file(tmp_path / "in", tmp_path / "out", SortConfig(memory_budget=1 << 24))
    assert r.mode == "internal" and (tmp_path / "out").read_bytes() == b""


def test_internal_malformed(tmp_path):
    (tmp_path / "in").write_bytes(b"x" * 1001)
    with pytest.raises(MalformedInputError):
        sort_file(tmp_path / "in", tmp_path / "out", SortConfig(memory_budget=1 << 24))


def test_internal_stage_attribution(tmp_path, monkeypatch):
    generate(GenSpec(1000, seed=3), tmp_path / "in")

    def bad_sort(*a, **k):
        raise DataIntegrityError("x")

    def boom(*a, **k):
        raise OSError("disk on fire")

    monkeypatch.setattr(P, "msd_radix_sort", bad_sort)
    with pytest.raises(StageError) as e:
        sort_file(tmp_path / "in", tmp_path / "out", SortConfig(memory_budget=1 << 24))
    assert e.value.stage == "sort"
    monkeypatch.setattr(P, "parallel_read", boom)
    with pytest.raises(StageError) as e:
        sort_file(tmp_path / "in", tmp_path / "out", SortConfig(memory_budget=1 << 24))
    assert e.value.stage == "read"


# -- runs ---------------------------------------------------------------------

def _external_plan(path, run_records, partitions=4, budget=1 << 26):
    cfg = SortConfig(memory_budget=budget, mode="external", run_records=run_records,
                     partition_count=partitions)
    return plan(os.path.getsize(path), budget, cfg), cfg


def test_form_runs_ten_runs(tmp_path):
    generate(GenSpec(100_000, seed=4), tmp_path / "in")
    p, cfg = _external_plan(tmp_path / "in", 10_000)
    runs = form_runs(tmp_path / "in", p, cfg, workdir=tmp_path)
    assert len(runs) == 10 and all(r.record_count == 10_000 for r in runs)
    total = None
    for i, r in enumerate(runs):
        assert Path(r.path).name == f"run-{i}"
        v = validate(r.path)
        assert v.ordered and v.record_count == 10_000
        assert r.first_key <= r.last_key
        total = v.checksum if total is None else total + v.checksum
    assert total == validate(tmp_path / "in").checksum


def test_form_runs_single_run_equals_internal(tmp_path):
    generate(GenSpec(3000, seed=5), tmp_path / "in")
    p, cfg = _external_plan(tmp_path / "in", 10_000)
    runs = form_runs(tmp_path / "in", p, cfg, workdir=tmp_path)
    sort_file(tmp_path / "in", tmp_path / "ref", SortConfig(memory_budget=1 << 26))
    assert len(runs) == 1 and Path(runs[0].path).read_bytes() == (tmp_path / "ref").read_bytes()


def test_form_runs_remainder(tmp_path):
    generate(GenSpec(25_000, seed=6), tmp_path / "in")
    p, cfg = _external_plan(tmp_path / "in", 10_000)
    runs = form_runs(tmp_path / "in", p, cfg, workdir=tmp_path)
    assert [r.record_count for r in runs] == [10_000, 10_000, 5_000]


# -- splitters and partitions --------------------------------------------------

def test_splitters_single_partition(tmp_path):
    runs = [write_run(tmp_path / "r0", [pad("a")])]
    assert sample_splitters(runs, 1) == []


def test_splitters_uniform_quartiles(tmp_path):
    rng = np.random.default_rng(7)
    runs = []
    for i in range(4):
        keys = sorted(bytes(k) for k in rng.integers(0, 256, (25_000, 10), dtype=np.uint8))
        runs.append(write_run(tmp_path / f"r{i}", keys))
    sp = sample_splitters(runs, 4)
    assert len(sp) == 3 and sp == sorted(sp)
    for s, q in zip(sp, (0.25, 0.5, 0.75)):
        assert abs(int.from_bytes(s, "big") / 2**80 - q) < 0.05
    sizes = [p.record_count for p in locate_partitions(runs, sp)]
    assert max(sizes) <= 2 * (100_000 / 4) and min(sizes) >= 0.5 * (100_000 / 4)


def test_splitters_identical_keys(tmp_path):
    runs = [write_run(tmp_path / f"r{i}", [pad("same")] * 500) for i in range(3)]
    sp = sample_splitters(runs, 5)
    assert sp == [pad("same")] * 4
    parts = locate_partitions(runs, sp)
    assert sum(p.record_count for p in parts) == 1500
    assert sum(1 for p in parts if p.record_count == 0) == 4


def test_locate_no_splitters(tmp_path):
    runs = [write_run(tmp_path / "a", [pad("a"), pad("b")]), write_run(tmp_path / "b", [pad("c")])]
    (part,) = locate_partitions(runs, [])
    assert part.slices == ((0, 2), (0, 1)) and part.low is None and part.high is None


def test_locate_splitter_below_all(tmp_path):
    runs = [write_run(tmp_path / "a", [pad("m"), pad("n")])]
    parts = locate_partitions(runs, [pad("a")])
    assert parts[0].record_count == 0 and parts[1].slices == ((0, 2),)


def test_locate_random_tiling(tmp_path):
    rng = np.random.default_rng(8)
    runs, keysets = [], []
    for i in range(6):
        n = int(rng.integers(0, 400))
        keys = sorted(bytes(k) for k in rng.integers(0, 4, (n, 10), dtype=np.uint8))
        keysets.append(keys)
        runs.append(write_run(tmp_path / f"r{i}", keys))
    for _ in range(20):
        sp = sorted(bytes(k) for k in rng.integers(0, 4, (int(rng.integers(0, 8)), 10), dtype=np.uint8))
        parts = locate_partitions(runs, sp)
        counts = linear_partition_counts(keysets, sp)
        for r in range(len(runs)):
            assert [p.slices[r][1] for p in parts] == counts[r]
            starts = [p.slices[r][0] for p in parts]
            assert starts == [sum(counts[r][:j]) for j in range(len(parts))]


def test_locate_unsorted_run(tmp_path):
    runs = [write_run(tmp_path / "ok", [pad("a"), pad("b")]),
            write_run(tmp_path / "bad", [pad("z"), pad("a"), pad("b"), pad("c")])]
    with pytest.raises(DataIntegrityError, match="run 1"):
        locate_partitions(runs, [pad("b")])


def test_balance_splits_duplicate_heavy(tmp_path):
    runs = [write_run(tmp_path / f"r{i}", sorted([pad("k")] * 300 + [pad(c) for c in "abxyz"]))
            for i in range(3)]
    parts = locate_partitions(runs, [])
    out = balance_partitions(parts, runs, max_records=100, target_records=80)
    assert all(p.record_count <= 100 for p in out)
    for r in range(3):
        pos = 0
        for p in out:
            s, c = p.slices[r]
            assert s == pos
            pos += c
        assert pos == 305


# -- merge ---------------------------------------------------------------------

def test_merge_single_slice():
    rng = np.random.default_rng(9)
    recs = sorted_records(random_records(rng, 100))
    assert merge_partition([recs]).tobytes() == recs.tobytes()


def test_merge_interleave():
    a = np.zeros((2, 100), np.uint8)
    b = np.zeros((2, 100), np.uint8)
    a[:, 0] = [ord("a"), ord("c")]
    b[:, 0] = [ord("b"), ord("d")]
    assert list(merge_partition([a, b])[:, 0]) == [ord(c) for c in "abcd"]


def test_merge_sixteen_slices():
    rng = np.random.default_rng(10)
    sizes = rng.multinomial(100_000, [1 / 16] * 16)
    slices = [sorted_records(random_records(rng, int(s), key_alphabet=8)) for s in sizes]
    out = merge_partition(slices)
    assert is_ordered(out.tobytes())
    assert multiset(out.tobytes()) == multiset(b"".join(s.tobytes() for s in slices))
    keys = np.concatenate([s[:, :10] for s in slices]).copy().view("S10").ravel()
    assert np.array_equal(out[:, :10].copy().view("S10").ravel(), np.sort(keys))


def test_merge_ties_by_slice_index():
    order = kway_merge_order([np.zeros((2, 10), np.uint8), np.zeros((3, 10), np.uint8)])
    assert list(order) == [0, 1, 2, 3, 4]


def test_merge_rejects_unsorted():
    bad = np.zeros((2, 100), np.uint8)
    bad[0, 0] = 5
    with pytest.raises(DataIntegrityError):
        merge_partition([np.zeros((1, 100), np.uint8), bad])


# -- end to end ----------------------------------------------------------------

def _leftovers(d):
    return [p for p in os.listdir(d) if ".runs-" in p]


def test_external_single_partition_single_run(tmp_path):
    generate(GenSpec(2000, seed=11), tmp_path / "in")
    p, cfg = _external_plan(tmp_path / "in", 10_000, partitions=1)
    execute_external(tmp_path / "in", tmp_path / "out", p, cfg)
    sort_file(tmp_path / "in", tmp_path / "ref", SortConfig(memory_budget=1 << 26))
    assert (tmp_path / "out").read_bytes() == (tmp_path / "ref").read_bytes()


@pytest.mark.parametrize("dist", ["uniform", "skewed"])
def test_external_small_budget(tmp_path, dist):
    generate(GenSpec(200_000, seed=12, distribution=dist), tmp_path / "in")
    cfg = SortConfig(memory_budget=8 << 20)
    r = sort_file(tmp_path / "in", tmp_path / "out", cfg)
    a, b = validate(tmp_path / "in"), validate(tmp_path / "out")
    assert r.mode == "external" and b.ordered and a.checksum == b.checksum
    assert r.extras["pool_peak"] <= cfg.memory_budget
    assert r.extras["max_partition_bytes"] <= cfg.memory_budget // 2
    assert r.extras["temporaries_removed"] and not _leftovers(tmp_path)


def test_external_all_equal_keys(tmp_path):
    recs = random_records(np.random.default_rng(13), 60_000)
    recs[:, :10] = 7
    (tmp_path / "in").write_bytes(recs.tobytes())
    cfg = SortConfig(memory_budget=4 << 20)
    r = sort_file(tmp_path / "in", tmp_path / "out", cfg)
    assert r.mode == "external" and r.extras["pool_peak"] <= cfg.memory_budget
    assert validate(tmp_path / "out").checksum == validate(tmp_path / "in").checksum


def test_external_sequential_identical(tmp_path):
    generate(GenSpec(150_000, seed=14, distribution="skewed"), tmp_path / "in")
    outs = []
    for seq in (False, True):
        cfg = SortConfig(memory_budget=8 << 20, sequential=seq, worker_count=4)
        sort_file(tmp_path / "in", tmp_path / f"out{seq}", cfg)
        outs.append((tmp_path / f"out{seq}").read_bytes())
    assert outs[0] == outs[1]


def test_external_failure_cleans_up(tmp_path, monkeypatch):
    generate(GenSpec(100_000, seed=15), tmp_path / "in")

    def broken(*a, **k):
        raise DataIntegrityError("corrupt partition")

    monkeypatch.setattr(P, "merge_concatenated", broken)
    with pytest.raises(StageError) as e:
        sort_file(tmp_path / "in", tmp_path / "out", SortConfig(memory_budget=8 << 20))
    assert e.value.stage == "merge"
    assert not _leftovers(tmp_path) and not (tmp_path / "out").exists()


def test_external_empty(tmp_path):
    (tmp_path / "in").write_bytes(b"")
    p, cfg = _external_plan(tmp_path / "in", 1024)
    r = execute_external(tmp_path / "in", tmp_path / "out", p, cfg)
    assert (tmp_path / "out").read_bytes() == b"" and r.extras["runs"] == 0


def test_plan_wrong_mode(tmp_path):
    generate(GenSpec(10, seed=16), tmp_path / "in")
    p, cfg = _external_plan(tmp_path / "in", 1024)
    with pytest.raises(ConfigurationError):
        sort_internal(tmp_path / "in", tmp_path / "out", p, cfg)


def test_ascii_end_to_end(tmp_path):
    generate(GenSpec(50_000, seed=17, encoding="ascii"), tmp_path / "in")
    for budget in (1 << 26, 2 << 20):
        r = sort_file(tmp_path / "in", tmp_path / "out", SortConfig(memory_budget=budget))
        v = validate(tmp_path / "out")
        assert v.ordered and v.checksum == validate(tmp_path / "in").checksum, r.mode


def test_generate_block_helper_shape():
    assert generate_block(GenSpec(5), 0).shape == (5, 100)
