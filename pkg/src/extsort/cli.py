"""Command-line front end: gen, sort, validate, bench and compare."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .bench import BASELINES, SCENARIOS, bench_compare, run_scenario
from .errors import ConfigurationError, SortError
from .genval import DISTRIBUTIONS, ENCODINGS, GenSpec, generate, validate
from .ioengine import DEFAULT_CHUNK_SIZE
from .pipeline import DIRECT_IO_MODES, MODES, SortConfig, sort_file
from .radix import RadixConfig, default_worker_count
from .report import kv_lines

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
_SUFFIXES = {"k": 1 << 10, "m": 1 << 20, "g": 1 << 30, "t": 1 << 40}


def byte_size(text: str) -> int:
    """``"4096"``, ``"64M"``, ``"1.5g"`` -> bytes."""
    t = text.strip().lower().removesuffix("b").removesuffix("i")
    scale = 1
    if t and t[-1] in _SUFFIXES:
        scale, t = _SUFFIXES[t[-1]], t[:-1]
    try:
        value = int(float(t) * scale)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a byte size: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("byte sizes must be non-negative")
    return value


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def count(text: str) -> int:
    try:
        value = int(float(text)) if "e" in text.lower() else int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a count: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def threshold(text: str):
    if text.lower() in ("inf", "infinity"):
        return float("inf")
    return count(text)


def _add_sort_knobs(p: argparse.ArgumentParser):
    p.add_argument("--memory-limit", type=byte_size, default=None, help="pool budget in bytes (K/M/G suffixes allowed)")
    p.add_argument("--mode", choices=MODES, default="auto")
    p.add_argument("--threads", type=positive_int, default=None, help="radix worker count")
    p.add_argument("--readers", type=positive_int, default=None)
    p.add_argument("--chunk-size", type=byte_size, default=DEFAULT_CHUNK_SIZE)
    p.add_argument("--big-bucket-threshold", type=threshold, default=None)
    p.add_argument("--tiny-bucket-threshold", type=threshold, default=64)
    p.add_argument("--direct-io", choices=DIRECT_IO_MODES, default="auto")
    p.add_argument("--sequential", action="store_true", help="run every stage on one thread")
    p.add_argument("--json", action="store_true", help="emit a JSON report instead of key=value lines")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="extsort", description="Sort files of 100-byte records by 10-byte key.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a record file")
    g.add_argument("output")
    g.add_argument("--records", type=count, required=True)
    g.add_argument("--seed", type=count, default=0)
    g.add_argument("--dist", choices=DISTRIBUTIONS, default="uniform")
    g.add_argument("--encoding", choices=ENCODINGS, default="binary")
    g.add_argument("--threads", type=positive_int, default=None)

    s = sub.add_parser("sort", help="sort a record file")
    s.add_argument("input")
    s.add_argument("output")
    _add_sort_knobs(s)

    v = sub.add_parser("validate", help="check order and print the multiset checksum")
    v.add_argument("path")
    v.add_argument("--json", action="store_true")

    b = sub.add_parser("bench", help="generate, sort and validate a named scenario")
    b.add_argument("--scenario", choices=sorted(SCENARIOS), required=True)
    b.add_argument("--records", type=count, default=None, help="override the scenario size")
    b.add_argument("--seed", type=count, default=0)
    _add_sort_knobs(b)

    c = sub.add_parser("compare", help="time the radix kernel against comparison sorts")
    c.add_argument("--scenario", choices=sorted(SCENARIOS), default=None)
    c.add_argument("--records", type=count, default=None)
    c.add_argument("--seed", type=count, default=0)
    c.add_argument("--baseline", choices=BASELINES, action="append", default=None)
    c.add_argument("--threads", type=positive_int, default=None)
    c.add_argument("--big-bucket-threshold", type=threshold, default=None)
    c.add_argument("--tiny-bucket-threshold", type=threshold, default=64)
    c.add_argument("--repeat", type=positive_int, default=1)
    c.add_argument("--json", action="store_true")
    return parser


def config_from_args(args) -> SortConfig:
    cfg = SortConfig(
        worker_count=args.threads or default_worker_count(),
        reader_count=args.readers,
        chunk_size=args.chunk_size,
        big_bucket_threshold=args.big_bucket_threshold,
        tiny_bucket_threshold=args.tiny_bucket_threshold,
        direct_io=args.direct_io,
        mode=args.mode,
        sequential=args.sequential,
    )
    if args.memory_limit is not None:
        cfg.memory_budget = args.memory_limit
    return cfg


def _emit(out, report: dict | None, lines: list[str], as_json: bool):
    if as_json:
        print(json.dumps(report, sort_keys=True, default=str), file=out)
    else:
        for line in lines:
            print(line, file=out)


def _cmd_gen(args, out):
    n = generate(GenSpec(args.records, args.seed, args.dist, args.encoding), args.output,
                 workers=args.threads or default_worker_count())
    print(f"records={n}", file=out)
    return EXIT_OK


def _cmd_sort(args, out):
    report = sort_file(args.input, args.output, config_from_args(args))
    _emit(out, report.as_dict(), report.to_lines(), args.json)
    return EXIT_OK


def _cmd_validate(args, out):
    report = validate(args.path)
    _emit(out, report.as_dict(), kv_lines(report.as_dict()), args.json)
    return EXIT_OK if report.ordered else EXIT_FAILURE


def _cmd_bench(args, out):
    report = run_scenario(args.scenario, config_from_args(args), seed=args.seed, records=args.records)
    _emit(out, report.as_dict(), report.to_lines(), args.json)
    ok = report.extras["ordered"] and report.extras["checksum_match"]
    return EXIT_OK if ok else EXIT_FAILURE


def _cmd_compare(args, out):
    if args.records is not None:
        target = args.records
    elif args.scenario is not None:
        target = args.scenario
    else:
        raise ConfigurationError("compare needs --scenario or --records")
    radix = RadixConfig(args.big_bucket_threshold, args.tiny_bucket_threshold,
                        args.threads or default_worker_count())
    report = bench_compare(target, tuple(args.baseline or ("comparison",)), radix,
                           seed=args.seed, repeat=args.repeat)
    lines = [f"records={report['records']}", f"worker_count={report['worker_count']}",
             f"radix_ms={report['radix_ms']:.3f}"]
    for name, b in report["baselines"].items():
        ratio = b["ratio"] if isinstance(b["ratio"], str) else f"{b['ratio']:.3f}"
        lines += [f"{name}_ms={b['ms']:.3f}", f"{name}_ratio={ratio}"]
    _emit(out, report, lines, args.json)
    return EXIT_OK


_COMMANDS = {"gen": _cmd_gen, "sort": _cmd_sort, "validate": _cmd_validate,
             "bench": _cmd_bench, "compare": _cmd_compare}


def cli_main(argv=None, out=None, err=None) -> int:
    """Run one command; returns 0 on success, 1 on runtime failure, 2 on bad usage."""
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args, out)
    except ConfigurationError as e:
        print(f"extsort {args.command}: configuration error: {e}", file=err)
        return EXIT_USAGE
    except (SortError, OSError, ValueError) as e:
        print(f"extsort {args.command}: {e}", file=err)
        return EXIT_FAILURE


def main():
    sys.exit(cli_main())
