"""Stage timing and machine-readable reports."""

from __future__ import annotations

import json
import threading
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

STAGES = ("read", "sort", "merge", "write")


class StageClock:
    """Accumulates per-stage busy time from any number of threads.

    Overlapped stages each count their own busy time, so the stage totals
    can exceed the wall-clock total.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._busy = {s: 0.0 for s in STAGES}
        self._start = time.monotonic()

    @contextmanager
    def span(self, stage: str):
        t0 = time.monotonic()
        try:
            yield
        finally:
            dt = time.monotonic() - t0
            with self._lock:
                self._busy[stage] = self._busy.get(stage, 0.0) + dt

    def elapsed(self) -> float:
        return time.monotonic() - self._start

    def busy_ms(self, stage: str) -> float:
        return self._busy.get(stage, 0.0) * 1000.0


@dataclass
class TimingBreakdown:
    mode: str
    total_ms: float = 0.0
    read_ms: float = 0.0
    sort_ms: float = 0.0
    write_ms: float = 0.0
    merge_ms: float = 0.0
    config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_clock(cls, mode: str, clock: StageClock, config: dict, **extras) -> "TimingBreakdown":
        return cls(
            mode=mode,
            total_ms=round(clock.elapsed() * 1000.0, 3),
            read_ms=round(clock.busy_ms("read"), 3),
            sort_ms=round(clock.busy_ms("sort"), 3),
            write_ms=round(clock.busy_ms("write"), 3),
            merge_ms=round(clock.busy_ms("merge"), 3),
            config=dict(config),
            extras=dict(extras),
        )

    def as_dict(self) -> dict:
        return asdict(self)

    def to_lines(self) -> list[str]:
        lines = [f"mode={self.mode}"]
        for name in ("total", "read", "sort", "write", "merge"):
            lines.append(f"{name}_ms={getattr(self, name + '_ms'):.3f}")
        lines += [f"config.{k}={_fmt(v)}" for k, v in sorted(self.config.items())]
        lines += [f"{k}={_fmt(v)}" for k, v in sorted(self.extras.items())]
        return lines

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, default=str)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if v is None:
        return "none"
    return str(v)


def kv_lines(d: dict, prefix: str = "") -> list[str]:
    return [f"{prefix}{k}={_fmt(v)}" for k, v in d.items()]
