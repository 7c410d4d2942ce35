"""Monotonic section timers with strict nesting."""
from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager


class TimingError(RuntimeError):
    pass


class Timer:
    """Accumulates wall time per section path, e.g. ``"iteration/learn"``.

    Sections must close in LIFO order; closing anything but the innermost
    open section raises ``TimingError``.
    """

    def __init__(self, clock=time.perf_counter):
        self.clock = clock
        self.totals: dict[str, float] = defaultdict(float)
        self.counts: dict[str, int] = defaultdict(int)
        self._stack: list[tuple[str, float]] = []

    def start(self, name: str):
        self._stack.append((name, self.clock()))

    def stop(self, name: str) -> float:
        if not self._stack or self._stack[-1][0] != name:
            top = self._stack[-1][0] if self._stack else None
            raise TimingError(f"cannot stop {name!r}: innermost open section is {top!r}")
        path = "/".join(n for n, _ in self._stack)
        _, t0 = self._stack.pop()
        dt = self.clock() - t0
        self.totals[path] += dt
        self.counts[path] += 1
        return dt

    @contextmanager
    def section(self, name: str):
        self.start(name)
        try:
            yield self
        finally:
            self.stop(name)

    def elapsed(self, path: str) -> float:
        return self.totals.get(path, 0.0)

    def check_closed(self):
        if self._stack:
            raise TimingError(f"open sections remain: {[n for n, _ in self._stack]}")

    def reset(self):
        self.check_closed()
        self.totals.clear()
        self.counts.clear()


def timing_probe(timer: Timer, section: str):
    return timer.section(section)
