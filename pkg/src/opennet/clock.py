"""Clocks. Production code reads wall time; tests and the simulator use virtual time."""

from __future__ import annotations

import threading
import time
from datetime import datetime, timedelta
from typing import Protocol

from opennet.core.model import UTC

TICK = timedelta(microseconds=1)


class Clock(Protocol):
    def now(self) -> datetime: ...

    def sleep(self, seconds: float) -> None: ...


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(UTC)

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class ManualClock:
    """Virtual clock whose readings strictly increase.

    Every :meth:`now` call advances time by one microsecond so that events
    recorded back to back never share a timestamp; :meth:`sleep` and
    :meth:`advance` move time forward without blocking.
    """

    def __init__(self, start: datetime | None = None, tick: timedelta = TICK) -> None:
        self._t = start or datetime(2026, 1, 1, tzinfo=UTC)
        self._tick = tick
        self._lock = threading.Lock()

    def now(self) -> datetime:
        with self._lock:
            self._t += self._tick
            return self._t

    def peek(self) -> datetime:
        return self._t

    def sleep(self, seconds: float) -> None:
        self.advance(seconds)

    def advance(self, seconds: float) -> None:
        with self._lock:
            self._t += timedelta(seconds=seconds)

    def set(self, t: datetime) -> None:
        with self._lock:
            if t > self._t:
                self._t = t
