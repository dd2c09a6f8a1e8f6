"""Long-lived bulk flows over a single bottleneck, outside any swarm.

Used to check the controllers on their own: a lone LEDBAT flow should hold
the estimated queuing delay at its target while keeping the link busy, and
next to a TCP flow it should back off to almost nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..sim import US_PER_S, EventKind, Simulator
from .flow import Flow
from .ledbat import LedbatState
from .link import AccessLink, Protocol
from .tcp import Flavor, TcpState

BULK_MESSAGE = 64 * 1024


@dataclass
class FlowStats:
    protocol: Protocol
    delivered_bytes: int = 0  # in-order payload bytes at the receiver
    window_bytes: int = 0  # the part delivered inside the measurement window
    qd_samples: list = field(default_factory=list)  # (time, estimated queuing delay)


@dataclass
class BenchResult:
    capacity_bps: int
    duration_s: float
    warmup_s: float
    flows: list[FlowStats]
    utilization: float  # bottleneck busy share inside the window
    mean_estimated_qd_us: Optional[float]  # time-average over LEDBAT flows
    mean_queue_delay_us: float  # from the link's own occupancy integral
    conservation_ok: bool = True

    def byte_share(self, index: int) -> float:
        total = sum(f.window_bytes for f in self.flows)
        return self.flows[index].window_bytes / total if total else 0.0


class _Bulk:
    """Keeps a flow's backlog non-empty from ``start_us`` to ``stop_us``."""

    def __init__(self, flow: Flow, stop_us: Optional[int]):
        self.flow = flow
        self.stop_us = stop_us
        flow.on_send = self._refill
        flow.on_message = self._delivered

    def start(self) -> None:
        for _ in range(4):
            self.flow.send_message(None, BULK_MESSAGE)

    def _refill(self, _msg) -> None:
        now = self.flow.sim.now
        if self.stop_us is None or now < self.stop_us:
            self.flow.backlog.append((None, BULK_MESSAGE))
            self.flow.backlog_bytes += BULK_MESSAGE

    def _delivered(self, _msg, nbytes: int) -> None:
        pass


def run_bulk(protocols: list[Protocol], capacity_bps: int = 5_000_000,
             buffer_seconds: float = 1.0, duration_s: float = 60.0, warmup_s: float = 10.0,
             target_us: int = 100_000, gain: float = 1.0, prop_delay_us: int = 1000,
             mss: int = 1448, tcp_flavor: Flavor = Flavor.NEWRENO,
             start_s: Optional[list[float]] = None, stop_s: Optional[list[Optional[float]]] = None,
             sample_every_us: int = 10_000) -> BenchResult:
    """All flows leave one sender uplink of ``capacity_bps`` toward distinct
    receivers; acks return over the receivers' own (idle) uplinks."""
    sim = Simulator(0)
    bottleneck = AccessLink(sim, capacity_bps, prop_delay_us=prop_delay_us,
                            buffer_seconds=buffer_seconds, name="bottleneck")
    horizon = int(duration_s * US_PER_S)
    window = (int(warmup_s * US_PER_S), horizon)
    flows, bulks, stats, links = [], [], [], [bottleneck]
    for i, proto in enumerate(protocols):
        ack_link = AccessLink(sim, capacity_bps, prop_delay_us=prop_delay_us,
                              buffer_seconds=buffer_seconds, name=f"rx{i}")
        links.append(ack_link)
        cc = (LedbatState.initial(mss, target_us, gain) if proto is Protocol.UTP
              else TcpState.initial(mss, flavor=tcp_flavor))
        fs = FlowStats(proto)
        flow = Flow(sim, i, proto, cc, 0, i + 1, bottleneck, ack_link, lambda m, n: None)
        stop = None
        if stop_s is not None and stop_s[i] is not None:
            stop = int(stop_s[i] * US_PER_S)
        bulk = _Bulk(flow, stop)
        begin = 0 if start_s is None else int(start_s[i] * US_PER_S)
        sim.schedule(begin, EventKind.TIMER_EXPIRY, bulk.start)
        flows.append(flow)
        bulks.append(bulk)
        stats.append(fs)

    def sample() -> None:
        now = sim.now
        for flow, fs in zip(flows, stats):
            if flow.is_ledbat and flow.cc.last_owd is not None and flow.flight > 0:
                fs.qd_samples.append((now, flow.cc.queuing_delay))
        sim.schedule(now + sample_every_us, EventKind.METRICS_SAMPLE, sample, daemon=True)

    sim.schedule(0, EventKind.METRICS_SAMPLE, sample, daemon=True)
    served_at_warmup = {}

    def mark() -> None:
        served_at_warmup["bytes"] = bottleneck.served_bytes
        served_at_warmup["flows"] = [f.delivered_bytes for f in flows]
        served_at_warmup["area"] = bottleneck._area + bottleneck.occupancy_bytes * (
            sim.now - bottleneck._last_change)

    sim.schedule(window[0], EventKind.METRICS_SAMPLE, mark, daemon=True)
    sim.run_to(horizon)

    for flow, fs, before in zip(flows, stats, served_at_warmup["flows"]):
        fs.delivered_bytes = flow.delivered_bytes
        fs.window_bytes = flow.delivered_bytes - before
    span = (window[1] - window[0]) / US_PER_S
    served = bottleneck.served_bytes - served_at_warmup["bytes"]
    utilization = served * 8 / (capacity_bps * span)
    area_end = bottleneck._area + bottleneck.occupancy_bytes * (sim.now - bottleneck._last_change)
    mean_q_bytes = (area_end - served_at_warmup["area"]) / (window[1] - window[0])
    qd = [q for fs in stats for t, q in fs.qd_samples if t >= window[0]]
    return BenchResult(capacity_bps, duration_s, warmup_s, stats, utilization,
                       sum(qd) / len(qd) if qd else None,
                       mean_q_bytes * 8 / capacity_bps * US_PER_S,
                       all(link.conservation_ok() for link in links))
