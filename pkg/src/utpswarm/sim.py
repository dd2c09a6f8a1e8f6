"""Discrete-event engine: integer-microsecond virtual clock, ordered event
queue with insertion-order tie-break, and named seeded RNG substreams."""

from __future__ import annotations

import enum
import hashlib
import heapq
from heapq import heappush
import random
from typing import Any, Callable, Optional

US_PER_S = 1_000_000


class EventKind(enum.Enum):
    PACKET_DEPARTURE = "PacketDeparture"
    PACKET_ARRIVAL = "PacketArrival"
    ACK_ARRIVAL = "AckArrival"
    TIMER_EXPIRY = "TimerExpiry"
    RECHOKE_TICK = "RechokeTick"
    OPTIMISTIC_UNCHOKE_TICK = "OptimisticUnchokeTick"
    TRACKER_ANNOUNCE = "TrackerAnnounce"
    METRICS_SAMPLE = "MetricsSample"


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current virtual time."""


class DeadlockError(RuntimeError):
    """No further progress is possible but the stop condition is unmet."""

    def __init__(self, message: str, now: int = 0, diagnostic: Optional[dict] = None):
        super().__init__(message)
        self.now = now
        self.diagnostic = diagnostic or {}


class Event:
    """A scheduled callback.  ``daemon`` events (periodic ticks) do not keep
    the simulation alive on their own."""

    __slots__ = ("fire_time", "sequence", "kind", "callback", "args", "cancelled", "daemon")

    def __init__(self, fire_time: int, sequence: int, kind: EventKind,
                 callback: Callable[..., Any], args: tuple, daemon: bool):
        self.fire_time = fire_time
        self.sequence = sequence
        self.kind = kind
        self.callback = callback
        self.args = args
        self.cancelled = False
        self.daemon = daemon

    def __repr__(self) -> str:
        return f"Event(t={self.fire_time}, seq={self.sequence}, kind={self.kind.value})"


class RngStreams:
    """One master seed fanned out to independent named substreams.

    Each substream is a ``random.Random`` seeded from a hash of
    ``(seed, name)``, so drawing from one concern never shifts another.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self._streams: dict[str, random.Random] = {}

    def stream(self, name: str) -> random.Random:
        rng = self._streams.get(name)
        if rng is None:
            digest = hashlib.sha256(f"{self.seed}:{name}".encode()).digest()
            rng = random.Random(int.from_bytes(digest[:8], "big"))
            self._streams[name] = rng
        return rng


class Simulator:
    def __init__(self, seed: int = 0):
        self.now = 0
        # heap entries: (time, seq, callback, args, Event or None for posted events)
        self._queue: list[tuple] = []
        self._seq = 0
        self._live = 0  # pending, non-cancelled, non-daemon events
        self.dispatched = 0
        self.rng = RngStreams(seed)

    def schedule(self, fire_time: int, kind: EventKind, callback: Callable[..., Any],
                 *args: Any, daemon: bool = False) -> Event:
        if fire_time < self.now:
            raise SchedulingError(
                f"cannot schedule {kind.value} at t={fire_time} (clock is t={self.now})")
        seq = self._seq
        ev = Event(fire_time, seq, kind, callback, args, daemon)
        self._seq = seq + 1
        if not daemon:
            self._live += 1
        heappush(self._queue, (fire_time, seq, callback, args, ev))
        return ev

    def post(self, fire_time: int, callback: Callable[..., Any], *args: Any) -> None:
        """Schedule a non-cancellable, live event without allocating an Event.
        Used on per-packet hot paths."""
        if fire_time < self.now:
            raise SchedulingError(f"cannot post at t={fire_time} (clock is t={self.now})")
        seq = self._seq
        self._seq = seq + 1
        self._live += 1
        heappush(self._queue, (fire_time, seq, callback, args, None))

    def schedule_in(self, delay: int, kind: EventKind, callback: Callable[..., Any],
                    *args: Any, daemon: bool = False) -> Event:
        return self.schedule(self.now + delay, kind, callback, *args, daemon=daemon)

    def cancel(self, ev: Event) -> None:
        if not ev.cancelled:
            ev.cancelled = True
            if not ev.daemon:
                self._live -= 1

    @property
    def pending(self) -> int:
        return sum(1 for item in self._queue if item[4] is None or not item[4].cancelled)

    def run_until(self, condition: Callable[[], bool],
                  time_limit: Optional[int] = None) -> int:
        """Dispatch events in order until ``condition()`` holds.

        Raises DeadlockError when only daemon events (or nothing) remain while
        the condition is still false, or when ``time_limit`` is passed.
        """
        queue = self._queue
        pop = heapq.heappop
        if condition():
            return self.now
        while queue:
            if self._live == 0:
                raise DeadlockError("no pending work and stop condition unmet", self.now)
            item = pop(queue)
            ev = item[4]
            if ev is not None and ev.cancelled:
                continue
            if time_limit is not None and item[0] > time_limit:
                heapq.heappush(queue, item)
                raise DeadlockError(f"time limit {time_limit} us reached", self.now)
            if ev is None or not ev.daemon:
                self._live -= 1
            self.now = item[0]
            self.dispatched += 1
            item[2](*item[3])
            if condition():
                return self.now
        raise DeadlockError("event queue empty and stop condition unmet", self.now)

    def run_to(self, t_end: int) -> int:
        """Dispatch every event with ``fire_time <= t_end``, then park the clock
        at ``t_end``.  Used for fixed-horizon experiments."""
        queue = self._queue
        pop = heapq.heappop
        while queue and queue[0][0] <= t_end:
            t, _, callback, args, ev = pop(queue)
            if ev is not None:
                if ev.cancelled:
                    continue
                if not ev.daemon:
                    self._live -= 1
            else:
                self._live -= 1
            self.now = t
            self.dispatched += 1
            callback(*args)
        self.now = max(self.now, t_end)
        return self.now
