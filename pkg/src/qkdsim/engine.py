"""Deterministic discrete-event core: virtual clock, ordered dispatch, seeded streams."""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Callable, Optional


class SchedulingInPast(Exception):
    """Raised when an event is scheduled before the current virtual time."""


@dataclass
class Event:
    """A scheduled occurrence. Equal fire_at values dispatch in ascending seq order."""

    fire_at: int  # virtual milliseconds
    target: str  # component id
    kind: str
    seq: int
    fn: Optional[Callable[[], None]] = None
    cancelled: bool = field(default=False, compare=False)


class EventHandle:
    """Cancellation token for a scheduled event. Cancelling twice is a no-op."""

    __slots__ = ("event",)

    def __init__(self, event: Event):
        self.event = event

    def cancel(self) -> None:
        self.event.cancelled = True

    @property
    def cancelled(self) -> bool:
        return self.event.cancelled


class RngStream:
    """Per-component random stream.

    Seeded from (seed, stream_id) only, so each component's draw sequence is
    independent of every other component and stable across runs and platforms
    (Mersenne Twister via the stdlib).
    """

    def __init__(self, seed: int, stream_id: str):
        self.seed = seed
        self.stream_id = stream_id
        digest = hashlib.sha256(f"{seed}:{stream_id}".encode()).digest()
        self._rng = random.Random(int.from_bytes(digest[:8], "big"))

    def random(self) -> float:
        return self._rng.random()

    def uniform(self, lo: float, hi: float) -> float:
        """Draw from [lo, hi); returns lo when the interval is empty."""
        if lo == hi:
            return lo
        return lo + (hi - lo) * self._rng.random()

    def uniform_int(self, lo: int, hi: int) -> int:
        """Inclusive integer draw from [lo, hi]."""
        return self._rng.randint(lo, hi)

    def randbytes(self, n: int) -> bytes:
        return self._rng.randbytes(n)


class Simulator:
    """Single-threaded event loop over integer-millisecond virtual time.

    Ties on fire_at break by insertion sequence number, which makes every run
    with the same seed replay the identical dispatch order.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._now = 0
        self._seq = 0
        self._heap: list[tuple[int, int, Event]] = []
        self._streams: dict[str, RngStream] = {}
        self.trace: list[dict] = []
        self.collect_trace = True

    def now(self) -> int:
        return self._now

    def stream(self, stream_id: str) -> RngStream:
        st = self._streams.get(stream_id)
        if st is None:
            st = RngStream(self.seed, stream_id)
            self._streams[stream_id] = st
        return st

    def schedule(
        self,
        fire_at: int,
        target: str,
        kind: str,
        fn: Optional[Callable[[], None]] = None,
    ) -> EventHandle:
        if fire_at < self._now:
            raise SchedulingInPast(f"fire_at {fire_at} < now {self._now}")
        ev = Event(fire_at=int(fire_at), target=target, kind=kind, seq=self._seq, fn=fn)
        self._seq += 1
        heapq.heappush(self._heap, (ev.fire_at, ev.seq, ev))
        return EventHandle(ev)

    def schedule_in(self, delay: int, target: str, kind: str, fn=None) -> EventHandle:
        return self.schedule(self._now + delay, target, kind, fn)

    def run_until(self, t: int) -> int:
        """Dispatch every pending event with fire_at <= t, then set now to t."""
        if t < self._now:
            raise SchedulingInPast(f"run_until {t} < now {self._now}")
        dispatched = 0
        while self._heap and self._heap[0][0] <= t:
            _, _, ev = heapq.heappop(self._heap)
            if ev.cancelled:
                continue
            self._now = ev.fire_at
            dispatched += 1
            if ev.fn is not None:
                ev.fn()
        self._now = t
        return dispatched

    def log(self, component: str, kind: str, detail: Optional[dict] = None) -> None:
        if not self.collect_trace:
            return
        self.trace.append(
            {"t_ms": self._now, "component": component, "kind": kind, "detail": detail or {}}
        )

    def trace_lines(self) -> list[str]:
        return [json.dumps(rec, sort_keys=True, separators=(",", ":")) for rec in self.trace]


def deterministic_uuid(stream: RngStream) -> str:
    """UUID-shaped identifier drawn from a stream, stable per (seed, stream, index)."""
    import uuid

    return str(uuid.UUID(bytes=stream.randbytes(16), version=4))
