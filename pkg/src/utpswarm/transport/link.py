"""Capacity-limited droptail FIFO modelling a home-gateway uplink.

The packet being serialized stays at the head of the FIFO (and counts toward
occupancy) until its departure, when it is dequeued, the post-dequeue
occupancy is logged, and it is handed to the far end after the propagation
delay.
"""

from __future__ import annotations

import enum
from array import array
from collections import deque
from typing import Any, Callable, Optional

from ..sim import Simulator

MTU = 1500
ACK_SIZE = 40
CONTROL_SIZE = 100


class Protocol(enum.Enum):
    TCP = "TCP"
    UTP = "UTP"

    __hash__ = object.__hash__  # identity hash; Enum's name hash is slow on hot paths


class PacketKind(enum.Enum):
    DATA = "Data"
    ACK = "Ack"
    CONTROL = "Control"

    __hash__ = object.__hash__


class EnqueueResult(enum.Enum):
    ACCEPTED = "Accepted"
    DROPPED = "Dropped"


class Packet:
    __slots__ = ("src", "dst", "conn_id", "protocol", "kind", "size", "send_timestamp",
                 "seq", "ack", "echo_ts", "owd", "payload", "handler")

    def __init__(self, src: int, dst: int, conn_id: int, protocol: Optional[Protocol],
                 kind: PacketKind, size: int, send_timestamp: int = 0,
                 handler: Optional[Callable[["Packet"], Any]] = None,
                 seq: int = -1, ack: int = -1, echo_ts: int = -1, owd: int = -1,
                 payload: Any = None):
        if size > MTU:
            raise ValueError(f"packet size {size} exceeds MTU {MTU}")
        self.src = src
        self.dst = dst
        self.conn_id = conn_id
        self.protocol = protocol
        self.kind = kind
        self.size = size
        self.send_timestamp = send_timestamp
        self.handler = handler
        self.seq = seq
        self.ack = ack
        self.echo_ts = echo_ts
        self.owd = owd
        self.payload = payload

    def __repr__(self) -> str:
        return (f"Packet({self.kind.value}, {self.src}->{self.dst}, size={self.size}, "
                f"seq={self.seq}, ack={self.ack})")


def owd_at_receiver(pkt: Packet, now: int) -> int:
    """One-way delay in microseconds.  Exact: virtual clocks never drift."""
    return now - pkt.send_timestamp


def serialization_us(size: int, capacity_bps: int) -> int:
    # ceiling so that a non-zero packet never serializes in zero time
    return -(-size * 8_000_000 // capacity_bps)


class AccessLink:
    def __init__(self, sim: Simulator, capacity_bps: int, buffer_limit: Optional[int] = None,
                 prop_delay_us: int = 1000, name: str = "", buffer_seconds: float = 1.0):
        if capacity_bps <= 0:
            raise ValueError("capacity must be positive")
        self.sim = sim
        self.capacity = int(capacity_bps)
        if buffer_limit is None:
            buffer_limit = int(round(capacity_bps * buffer_seconds / 8))
        self.buffer_limit = int(buffer_limit)
        self.prop_delay = int(prop_delay_us)
        self.name = name
        self.fifo: deque[Packet] = deque()
        self.occupancy_bytes = 0
        self.occupancy_pkts = 0
        self.enqueued_pkts = 0
        self.enqueued_bytes = 0
        self.served_pkts = 0
        self.served_bytes = 0
        self.dropped_pkts = 0
        self.dropped_bytes = 0
        self.served_by_kind: dict[tuple, int] = {}
        self.log_time = array("q")
        self.log_bytes = array("q")
        self.log_pkts = array("q")
        self._busy = False
        # time-weighted occupancy integral (byte-microseconds)
        self._area = 0
        self._last_change = 0
        # optional hook, called with each dequeued packet
        self.on_serve: Optional[Callable[[Packet], Any]] = None

    @property
    def queued_pkts(self) -> int:
        return self.occupancy_pkts

    @property
    def busy(self) -> bool:
        return self._busy

    def _advance_area(self, now: int) -> None:
        self._area += self.occupancy_bytes * (now - self._last_change)
        self._last_change = now

    def time_average_occupancy(self, until: Optional[int] = None) -> float:
        now = self.sim.now if until is None else until
        area = self._area + self.occupancy_bytes * (now - self._last_change)
        return area / now if now > 0 else 0.0

    def enqueue(self, pkt: Packet) -> EnqueueResult:
        size = pkt.size
        self.enqueued_pkts += 1
        self.enqueued_bytes += size
        if self.occupancy_bytes + size > self.buffer_limit:
            self.dropped_pkts += 1
            self.dropped_bytes += size
            return EnqueueResult.DROPPED
        now = self.sim.now
        self._area += self.occupancy_bytes * (now - self._last_change)
        self._last_change = now
        self.fifo.append(pkt)
        self.occupancy_bytes += size
        self.occupancy_pkts += 1
        if not self._busy:
            self._busy = True
            self.sim.post(now + serialization_us(size, self.capacity), self._on_departure)
        return EnqueueResult.ACCEPTED

    def dequeue(self, now: int) -> Packet:
        if not self.fifo:
            raise RuntimeError(f"dequeue on empty link {self.name!r}")
        occ = self.occupancy_bytes
        self._area += occ * (now - self._last_change)
        self._last_change = now
        pkt = self.fifo.popleft()
        size = pkt.size
        occ -= size
        self.occupancy_bytes = occ
        self.occupancy_pkts -= 1
        self.served_pkts += 1
        self.served_bytes += size
        by_kind = self.served_by_kind
        key = (pkt.kind, pkt.protocol)
        by_kind[key] = by_kind.get(key, 0) + size
        self.log_time.append(now)
        self.log_bytes.append(occ)
        self.log_pkts.append(self.occupancy_pkts)
        return pkt

    def _on_departure(self) -> None:
        # dequeue() inlined: this runs once per packet on every link
        sim = self.sim
        now = sim.now
        fifo = self.fifo
        occ = self.occupancy_bytes
        self._area += occ * (now - self._last_change)
        self._last_change = now
        pkt = fifo.popleft()
        size = pkt.size
        occ -= size
        pkts = self.occupancy_pkts - 1
        self.occupancy_bytes = occ
        self.occupancy_pkts = pkts
        self.served_pkts += 1
        self.served_bytes += size
        by_kind = self.served_by_kind
        key = (pkt.kind, pkt.protocol)
        by_kind[key] = by_kind.get(key, 0) + size
        self.log_time.append(now)
        self.log_bytes.append(occ)
        self.log_pkts.append(pkts)
        if fifo:
            sim.post(now + -(-fifo[0].size * 8_000_000 // self.capacity), self._on_departure)
        else:
            self._busy = False
        if self.on_serve is not None:
            self.on_serve(pkt)
        if pkt.handler is not None:
            sim.post(now + self.prop_delay, pkt.handler, pkt)

    def conservation_ok(self) -> bool:
        return (self.served_pkts + self.dropped_pkts + self.occupancy_pkts == self.enqueued_pkts
                and self.served_bytes + self.dropped_bytes + self.occupancy_bytes
                == self.enqueued_bytes)


def link_enqueue(link: AccessLink, pkt: Packet) -> EnqueueResult:
    return link.enqueue(pkt)


def link_dequeue(link: AccessLink, now: int) -> Packet:
    return link.dequeue(now)
