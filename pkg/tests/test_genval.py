import numpy as np
import pytest

from extsort.errors import MalformedInputError
from extsort.genval import GEN_BLOCK, GenSpec, generate, generate_block, validate, validate_order
from extsort.records import checksum_span
from oracles import is_ordered


def test_count_zero(tmp_path):
    assert generate(GenSpec(0), tmp_path / "g") == 0
    assert (tmp_path / "g").read_bytes() == b""
    r = validate(tmp_path / "g")
    assert r.ordered and r.record_count == 0 and r.checksum.value == 0


def test_deterministic_across_runs_and_workers(tmp_path):
    spec = GenSpec(GEN_BLOCK * 2 + 17, seed=9, distribution="skewed")
    generate(spec, tmp_path / "a", workers=1)
    generate(spec, tmp_path / "b", workers=4)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    generate(GenSpec(spec.count, seed=10, distribution="skewed"), tmp_path / "c")
    assert (tmp_path / "a").read_bytes() != (tmp_path / "c").read_bytes()


def test_uniform_first_octet_histogram():
    n = 10**6
    counts = np.zeros(256, np.int64)
    spec = GenSpec(n, seed=1)
    for b in range(-(-n // GEN_BLOCK)):
        counts += np.bincount(generate_block(spec, b)[:, 0], minlength=256)
    mean = n / 256
    sigma = np.sqrt(n * (1 / 256) * (255 / 256))
    assert np.all(np.abs(counts - mean) <= 5 * sigma)


def test_ascii_encoding():
    recs = generate_block(GenSpec(5000, seed=2, encoding="ascii", distribution="skewed"), 0)
    assert recs[:, :10].min() >= 0x20 and recs[:, :10].max() <= 0x7E
    assert (recs[:, 98] == 0x0D).all() and (recs[:, 99] == 0x0A).all()


def test_skewed_concentrates_first_octet():
    recs = generate_block(GenSpec(20_000, seed=3, distribution="skewed"), 0)
    counts = np.bincount(recs[:, 0], minlength=256)
    assert counts[0] > 10 * counts[128:].mean()


def test_payload_carries_ordinal():
    recs = generate_block(GenSpec(10, seed=4), 0)
    assert recs[7, 10:26].tobytes() == b"0000000000000007"


def test_spec_validation():
    with pytest.raises(ValueError):
        GenSpec(-1)
    with pytest.raises(ValueError):
        GenSpec(1, distribution="zipf")


def test_validate_sorted(tmp_path):
    recs = generate_block(GenSpec(3000, seed=5), 0)
    recs = recs[np.argsort(recs[:, :10].copy().view("S10").ravel(), kind="stable")]
    (tmp_path / "s").write_bytes(recs.tobytes())
    r = validate(tmp_path / "s", chunk_size=1000)
    assert r.ordered and r.first_violation is None and r.record_count == 3000
    assert validate_order(tmp_path / "s")


@pytest.mark.parametrize("i", [0, 9, 10, 1500, 2998])
def test_validate_swapped_pair(tmp_path, i):
    recs = generate_block(GenSpec(3000, seed=6), 0)
    recs = recs[np.argsort(recs[:, :10].copy().view("S10").ravel(), kind="stable")]
    recs[[i, i + 1]] = recs[[i + 1, i]]
    (tmp_path / "s").write_bytes(recs.tobytes())
    r = validate(tmp_path / "s", chunk_size=1000)  # chunk boundaries every 10 records
    assert not r.ordered and r.first_violation == i + 1
    assert r.ordered == is_ordered(recs.tobytes())


def test_validate_checksum_matches(tmp_path):
    recs = generate_block(GenSpec(2000, seed=7), 0)
    (tmp_path / "s").write_bytes(recs.tobytes())
    assert validate(tmp_path / "s", chunk_size=700).checksum == checksum_span(recs[::-1].copy())


def test_validate_malformed(tmp_path):
    (tmp_path / "m").write_bytes(b"x" * 250)
    with pytest.raises(MalformedInputError):
        validate(tmp_path / "m")
