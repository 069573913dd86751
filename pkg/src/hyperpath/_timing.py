"""Wall-clock accounting for the continuation loop, grouped by phase."""

import time
from contextlib import contextmanager


class PhaseTimer:
    """Accumulates wall time per named section; sections may nest but
    nested time is counted in every enclosing section."""

    def __init__(self):
        self.totals = {}

    @contextmanager
    def section(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] = (
                self.totals.get(name, 0.0) + time.perf_counter() - t0
            )

    def as_dict(self):
        return dict(self.totals)


class _NullTimer:
    @contextmanager
    def section(self, name):
        yield

    def as_dict(self):
        return {}


NULL_TIMER = _NullTimer()
