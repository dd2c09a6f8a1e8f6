"""Statistics over finished runs: completion-time CDFs, post-dequeue queue
CCDFs, transport byte shares, envelopes across replications and the
completion-time regression."""

from __future__ import annotations

import bisect
import csv
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function given by its jump points."""

    xs: tuple[float, ...]
    ys: tuple[float, ...]
    left: float = 0.0  # value before the first jump

    def __call__(self, x: float) -> float:
        i = bisect.bisect_right(self.xs, x)
        return self.left if i == 0 else self.ys[i - 1]


def compute_cdf(samples: Sequence[float]) -> StepFunction:
    """Empirical CDF: F(x) = fraction of samples <= x."""
    if len(samples) == 0:
        raise MetricsError("cannot build a CDF from an empty sample set")
    values, counts = np.unique(np.asarray(samples, dtype=float), return_counts=True)
    cum = np.cumsum(counts) / counts.sum()
    return StepFunction(tuple(values.tolist()), tuple(cum.tolist()), 0.0)


def compute_ccdf(samples: Sequence[float]) -> StepFunction:
    """Empirical CCDF: G(x) = fraction of samples > x."""
    if len(samples) == 0:
        raise MetricsError("cannot build a CCDF from an empty sample set")
    cdf = compute_cdf(samples)
    return StepFunction(cdf.xs, tuple(1.0 - y for y in cdf.ys), 1.0)


@dataclass(frozen=True)
class QueueStats:
    ccdf: StepFunction
    busy_fraction: float  # P(Q > 0) over post-dequeue samples
    mean_bytes: float
    mean_ms: float
    samples: int


def bytes_to_ms(nbytes: float, capacity_bps: float) -> float:
    return nbytes * 8.0 / capacity_bps * 1000.0


def compute_ccdf_from_dequeue_log(log: Sequence[float], capacity_bps: float) -> QueueStats:
    if len(log) == 0:
        raise MetricsError("empty dequeue log")
    arr = np.asarray(log, dtype=float)
    mean = float(arr.mean())
    return QueueStats(ccdf=compute_ccdf(arr), busy_fraction=float(np.count_nonzero(arr)) / len(arr),
                      mean_bytes=mean, mean_ms=bytes_to_ms(mean, capacity_bps), samples=len(arr))


def byte_share(tcp_bytes: int, utp_bytes: int) -> tuple[float, float]:
    """(TCP %, uTP %) of the carried bytes; sums to 100."""
    total = tcp_bytes + utp_bytes
    if total <= 0:
        raise MetricsError("no data bytes carried")
    tcp = 100.0 * tcp_bytes / total
    return tcp, 100.0 - tcp


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    r2: float
    n: int

    def predict(self, x: float) -> float:
        return self.slope * x + self.intercept


def linear_fit(points: Iterable[tuple[float, float]], exclude_zero: bool = True) -> RegressionFit:
    """Ordinary least squares y = slope*x + intercept.  Points with x == 0
    are left out unless ``exclude_zero`` is False."""
    pts = [(float(x), float(y)) for x, y in points if not (exclude_zero and x == 0)]
    if len(pts) < 2:
        raise MetricsError("need at least two points with non-zero share")
    xs = [x for x, _ in pts]
    if min(xs) == max(xs):
        raise MetricsError("degenerate fit: all x values are equal")
    ys = [y for _, y in pts]
    fit = stats.linregress(xs, ys)
    slope, intercept, n = float(fit.slope), float(fit.intercept), len(pts)
    # linregress reports r = nan for a constant y; that fit is exact
    r2 = float(fit.rvalue) ** 2 if min(ys) != max(ys) else 1.0
    return RegressionFit(slope, intercept, r2, n)


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    rho = stats.spearmanr(xs, ys).statistic
    return float(rho)


@dataclass(frozen=True)
class Envelope:
    grid: tuple[float, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def contains(self, fn: StepFunction, tol: float = 1e-12) -> bool:
        return all(lo - tol <= fn(x) <= hi + tol
                   for x, lo, hi in zip(self.grid, self.lower, self.upper))


def envelope(curves: Sequence[StepFunction]) -> Envelope:
    """Pointwise min/max of step functions on the merged jump grid."""
    if not curves:
        raise MetricsError("envelope needs at least one curve")
    grid = sorted(set().union(*(c.xs for c in curves)))
    lower, upper = [], []
    for x in grid:
        vals = [c(x) for c in curves]
        lower.append(min(vals))
        upper.append(max(vals))
    return Envelope(tuple(grid), tuple(lower), tuple(upper))


def envelope_of_reports(reports: Sequence["SimulationReport"], curve: str = "completion"
                        ) -> Envelope:
    if len(reports) < 1:
        raise MetricsError("no reports")
    digests = {r.config_digest for r in reports}
    if len(digests) != 1:
        raise MetricsError("envelope over reports with different configurations")
    if curve == "completion":
        curves = [compute_cdf(list(r.completion_s.values())) for r in reports]
    elif curve == "queue":
        curves = [r.queue_ccdf for r in reports]
    else:
        raise MetricsError(f"unknown curve {curve!r}")
    return envelope(curves)


# --------------------------------------------------------------------------- reports

@dataclass
class ClassSummary:
    name: str
    peers: int
    mean_T: float
    mean_Q_bytes: float
    mean_Q_ms: float


@dataclass
class SimulationReport:
    scenario: str
    seed: int
    config_digest: str
    capacity_bps: int
    completion_s: dict[int, float]
    peer_class: dict[int, str]
    mean_T: float
    std_T: float
    queue_ccdf: StepFunction
    mean_Q_bytes: float
    mean_Q_ms: float
    mean_Q_time_avg_bytes: float
    busy_fraction: float
    busy_fraction_active: float
    active_end_s: float
    tcp_share: float
    utp_share: float
    tcp_data_bytes: int
    utp_data_bytes: int
    wire_tcp_share: float
    classes: dict[str, ClassSummary]
    drops: int
    control_drops: int
    end_time_s: float
    events: int
    conservation_ok: bool
    queue_logs: dict[int, tuple] = field(default_factory=dict, repr=False)
    tcp_peer_share: float = 0.0

    def summary_row(self) -> dict:
        row = {
            "scenario": self.scenario, "seed": self.seed, "config_digest": self.config_digest,
            "peers": len(self.completion_s), "mean_T_s": self.mean_T, "std_T_s": self.std_T,
            "mean_Q_bytes": self.mean_Q_bytes, "mean_Q_ms": self.mean_Q_ms,
            "mean_Q_time_avg_bytes": self.mean_Q_time_avg_bytes,
            "busy_fraction": self.busy_fraction, "busy_fraction_active": self.busy_fraction_active,
            "tcp_share_pct": self.tcp_share, "utp_share_pct": self.utp_share,
            "wire_tcp_share_pct": self.wire_tcp_share, "tcp_peer_share_pct": self.tcp_peer_share,
            "drops": self.drops, "control_drops": self.control_drops,
            "end_time_s": self.end_time_s, "events": self.events,
        }
        for name, c in sorted(self.classes.items()):
            row[f"mean_T_{name}_s"] = c.mean_T
            row[f"mean_Q_{name}_ms"] = c.mean_Q_ms
        return row


def _fixed(value, digits: int = 6) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.{digits}f}"
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fixed(v) for v in row])


def export_report(report: SimulationReport, out_dir: str,
                  regression: Optional[RegressionFit] = None) -> list[str]:
    """Write report/completion/queue_<peer>/regression CSVs; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    row = report.summary_row()
    p = os.path.join(out_dir, "report.csv")
    write_csv(p, list(row), [list(row.values())])
    paths.append(p)
    p = os.path.join(out_dir, "completion.csv")
    write_csv(p, ["peer_id", "class", "T_s"],
              [(pid, report.peer_class[pid], t) for pid, t in sorted(report.completion_s.items())])
    paths.append(p)
    for pid, (times, qbytes, qpkts) in sorted(report.queue_logs.items()):
        p = os.path.join(out_dir, f"queue_{pid}.csv")
        write_csv(p, ["time_s", "bytes", "pkts"],
                  ((t / 1e6, b, k) for t, b, k in zip(times, qbytes, qpkts)))
        paths.append(p)
    p = os.path.join(out_dir, "regression.csv")
    if regression is None:
        write_csv(p, ["slope", "intercept", "r2", "n"], [])
    else:
        write_csv(p, ["slope", "intercept", "r2", "n"],
                  [(regression.slope, regression.intercept, regression.r2, regression.n)])
    paths.append(p)
    return paths


def active_phase_end(completions: Sequence[float], quantile: float = 0.9) -> float:
    """Time by which ``quantile`` of the leechers have completed; queue
    samples after it belong to the last-completer tail."""
    ordered = sorted(completions)
    k = max(1, math.ceil(quantile * len(ordered)))
    return ordered[k - 1]


def build_report(swarm, keep_logs: bool = True) -> SimulationReport:
    """Assemble the metric bundle from a finished swarm run."""
    from .swarm.peer import Role
    from .transport.link import PacketKind, Protocol

    cfg = swarm.config
    leechers = [p for p in swarm.peers if p.role is Role.LEECHER]
    completion = {p.id: p.completion_time / 1e6 for p in leechers}
    peer_class = {p.id: p.klass for p in leechers}
    ts = np.array(list(completion.values()))
    active_end = active_phase_end(ts.tolist())
    active_end_us = int(round(active_end * 1e6))

    all_q, active_q = [], []
    area_avg = []
    class_q: dict[str, list] = {}
    logs = {}
    capacities = set()
    for p in swarm.peers:
        link = p.link
        capacities.add(link.capacity)
        qb = np.frombuffer(link.log_bytes, dtype=np.int64) if len(link.log_bytes) else \
            np.zeros(0, dtype=np.int64)
        qt = np.frombuffer(link.log_time, dtype=np.int64) if len(link.log_time) else \
            np.zeros(0, dtype=np.int64)
        all_q.append(qb)
        active_q.append(qb[qt <= active_end_us])
        class_q.setdefault(p.klass, []).append(qb)
        area_avg.append(link.time_average_occupancy(swarm.sim.now))
        if keep_logs:
            logs[p.id] = (link.log_time.tolist(), link.log_bytes.tolist(), link.log_pkts.tolist())
    capacity = min(capacities)
    pooled = np.concatenate(all_q)
    qstats = compute_ccdf_from_dequeue_log(pooled, capacity)
    active = np.concatenate(active_q)
    busy_active = float(np.count_nonzero(active)) / len(active) if len(active) else 0.0

    tcp_bytes = utp_bytes = 0
    for conn in swarm.connections:
        carried = conn.side_a.out_flow.delivered_bytes + conn.side_b.out_flow.delivered_bytes
        if conn.protocol is Protocol.TCP:
            tcp_bytes += carried
        else:
            utp_bytes += carried
    if tcp_bytes + utp_bytes > 0:
        tcp_share, utp_share = byte_share(tcp_bytes, utp_bytes)
    else:
        tcp_share = utp_share = float("nan")
    wire = {Protocol.TCP: 0, Protocol.UTP: 0}
    for p in swarm.peers:
        for (kind, proto), nbytes in p.link.served_by_kind.items():
            if proto is not None:
                wire[proto] += nbytes
    wsum = wire[Protocol.TCP] + wire[Protocol.UTP]
    wire_tcp = 100.0 * wire[Protocol.TCP] / wsum if wsum else float("nan")

    classes = {}
    for name in sorted({p.klass for p in leechers}):
        members = [completion[p.id] for p in leechers if p.klass == name]
        q = np.concatenate(class_q[name])
        qmean = float(q.mean()) if len(q) else 0.0
        cap = min(p.link.capacity for p in swarm.peers if p.klass == name)
        classes[name] = ClassSummary(name, len(members), float(np.mean(members)), qmean,
                                     bytes_to_ms(qmean, cap))

    tcp_peers = sum(1 for p in leechers if p.disposition & 1 and not p.disposition & 2)
    return SimulationReport(
        scenario=cfg.name, seed=swarm.seed, config_digest=cfg.digest(), capacity_bps=capacity,
        completion_s=completion, peer_class=peer_class,
        mean_T=float(ts.mean()), std_T=float(ts.std()),
        queue_ccdf=qstats.ccdf, mean_Q_bytes=qstats.mean_bytes, mean_Q_ms=qstats.mean_ms,
        mean_Q_time_avg_bytes=float(np.mean(area_avg)),
        busy_fraction=qstats.busy_fraction, busy_fraction_active=busy_active,
        active_end_s=active_end,
        tcp_share=tcp_share, utp_share=utp_share, tcp_data_bytes=tcp_bytes,
        utp_data_bytes=utp_bytes, wire_tcp_share=wire_tcp, classes=classes,
        drops=sum(p.link.dropped_pkts for p in swarm.peers), control_drops=swarm.control_dropped,
        end_time_s=swarm.sim.now / 1e6, events=swarm.sim.dispatched,
        conservation_ok=all(p.link.conservation_ok() for p in swarm.peers),
        queue_logs=logs, tcp_peer_share=100.0 * tcp_peers / len(leechers),
    )
