"""Injectable time sources.

The probe engine never reads the wall clock directly; it is handed a
clock object. SystemClock is the real thing. VirtualClock advances only
when told to, which lets multi-day scans run in milliseconds and keeps
simulation runs deterministic.
"""

import time
from typing import Protocol, runtime_checkable


@runtime_checkable
class Clock(Protocol):
    def now(self) -> float: ...

    def sleep(self, seconds: float) -> None: ...

    def sleep_until(self, when: float) -> None: ...


class SystemClock:
    """Wall-clock epoch seconds, real sleeps."""

    def now(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)

    def sleep_until(self, when: float) -> None:
        self.sleep(when - self.now())


class VirtualClock:
    """Simulated time; sleep() is just arithmetic. Never moves backwards."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def sleep(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError(f"cannot sleep a negative duration: {seconds}")
        self._now += seconds

    def sleep_until(self, when: float) -> None:
        if when > self._now:
            self._now = when
