"""Benchmark scenarios and the radix-versus-comparison kernel comparison."""

from __future__ import annotations

import os
import shutil
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from .genval import GenSpec, generate, validate
from .pipeline import SortConfig, sort_file
from .radix import RadixConfig, msd_radix_sort
from .records import KEY_SIZE, KEYREF_DTYPE
from .report import TimingBreakdown


@dataclass(frozen=True)
class Scenario:
    name: str
    records: int
    distribution: str = "uniform"
    encoding: str = "binary"
    memory_budget: int | None = None
    mode: str = "auto"


SCENARIOS = {
    s.name: s
    for s in (
        Scenario("uniform-small", 10**5),
        Scenario("uniform-large", 10**7),
        Scenario("skewed-large", 10**7, distribution="skewed"),
        Scenario("ascii-small", 10**5, encoding="ascii"),
        Scenario("external-capped", 2 * 10**6, memory_budget=64 << 20),
    )
}

BASELINES = ("comparison", "stable")


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


def run_scenario(scenario: Scenario | str, config: SortConfig | None = None, seed: int = 0,
                 workdir=None, records: int | None = None) -> TimingBreakdown:
    """Generate, sort and validate one scenario; the report carries the validation result."""
    if isinstance(scenario, str):
        scenario = get_scenario(scenario)
    config = config or SortConfig()
    if scenario.memory_budget is not None:
        config.memory_budget = scenario.memory_budget
    if scenario.mode != "auto":
        config.mode = scenario.mode
    n = scenario.records if records is None else records
    tmp = tempfile.mkdtemp(prefix="extsort-bench-", dir=workdir)
    try:
        src = os.path.join(tmp, "input")
        dst = os.path.join(tmp, "output")
        generate(GenSpec(n, seed, scenario.distribution, scenario.encoding), src,
                 workers=config.worker_count)
        before = validate(src)
        report = sort_file(src, dst, config)
        after = validate(dst)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    report.extras.update(
        scenario=scenario.name, seed=seed, distribution=scenario.distribution,
        encoding=scenario.encoding, ordered=after.ordered,
        checksum_match=before.checksum == after.checksum and before.record_count == after.record_count,
    )
    return report


def random_keyrefs(n: int, seed: int = 0, distribution: str = "uniform") -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = np.empty(n, dtype=KEYREF_DTYPE)
    out["key"] = rng.integers(0, 256, size=(n, KEY_SIZE), dtype=np.uint8)
    if distribution == "skewed" and n:
        p = 1.0 / np.arange(1, 257)
        out["key"][:, 0] = rng.choice(256, size=n, p=p / p.sum())
    out["ordinal"] = np.arange(n, dtype=np.uint64)
    return out


def comparison_sort(keyrefs: np.ndarray, kind: str = "quicksort") -> np.ndarray:
    """Baseline: numpy sort of the keys viewed as 10-byte strings (byte-lexicographic)."""
    keys = np.ascontiguousarray(keyrefs["key"]).view("S10").reshape(-1)
    return keyrefs[np.argsort(keys, kind=kind)]


def bench_compare(scenario: Scenario | str | int, baselines=("comparison",),
                  config: RadixConfig | None = None, seed: int = 0, repeat: int = 1) -> dict:
    """Time the radix kernel and comparison baselines on identical KeyRefs.

    Key sequences must agree before any timing is reported; ``ratio`` is
    baseline time over radix time (``"n/a"`` when there is nothing to sort).
    """
    if isinstance(scenario, int):
        n, dist = scenario, "uniform"
    else:
        sc = get_scenario(scenario) if isinstance(scenario, str) else scenario
        n, dist = sc.records, sc.distribution
    for b in baselines:
        if b not in BASELINES:
            raise ValueError(f"unknown baseline {b!r}; choose from {BASELINES}")
    config = config or RadixConfig()
    data = random_keyrefs(n, seed, dist)

    def best(fn):
        times, result = [], None
        for _ in range(max(1, repeat)):
            t0 = time.perf_counter()
            result = fn()
            times.append(time.perf_counter() - t0)
        return min(times), result

    msd_radix_sort(random_keyrefs(min(n, 1024), seed + 1), config)  # compile outside the timer
    radix_s, radix_out = best(lambda: msd_radix_sort(data.copy(), config))
    report = {"records": n, "distribution": dist, "worker_count": config.worker_count,
              "radix_ms": radix_s * 1000.0, "baselines": {}}
    for b in baselines:
        kind = "stable" if b == "stable" else "quicksort"
        base_s, base_out = best(lambda: comparison_sort(data, kind))
        if not np.array_equal(radix_out["key"], base_out["key"]):
            raise AssertionError(f"radix and {b} kernels disagree on key order")
        report["baselines"][b] = {
            "ms": base_s * 1000.0,
            "ratio": "n/a" if n == 0 or radix_s == 0 else base_s / radix_s,
        }
    first = report["baselines"].get(baselines[0]) if baselines else None
    report["ratio"] = first["ratio"] if first else "n/a"
    return report
