"""Loss-based TCP window controller: NewReno AIMD, with an optional Cubic
growth function for sensitivity runs."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

CUBIC_C = 0.4
CUBIC_BETA = 0.7


class Phase(enum.Enum):
    SLOW_START = "SlowStart"
    CONGESTION_AVOIDANCE = "CongestionAvoidance"
    FAST_RECOVERY = "FastRecovery"


class LossKind(enum.Enum):
    TRIPLE_DUP_ACK = "TripleDupAck"
    TIMEOUT = "Timeout"


class Flavor(enum.Enum):
    NEWRENO = "NewReno"
    CUBIC = "Cubic"


@dataclass
class TcpState:
    mss: int = 1448
    cwnd: float = 3 * 1448
    ssthresh: float = math.inf
    phase: Phase = Phase.SLOW_START
    dup_ack_count: int = 0
    flavor: Flavor = Flavor.NEWRENO
    # cubic bookkeeping (segments / microseconds)
    w_max: float = 0.0
    epoch_start: Optional[int] = None

    @classmethod
    def initial(cls, mss: int = 1448, init_segments: int = 3,
                flavor: Flavor = Flavor.NEWRENO) -> "TcpState":
        return cls(mss=mss, cwnd=float(init_segments * mss), flavor=flavor)


def _cubic_increment(state: TcpState, bytes_acked: int, now: int) -> float:
    mss = state.mss
    if state.epoch_start is None:
        state.epoch_start = now
        if state.w_max < state.cwnd / mss:
            state.w_max = state.cwnd / mss
    w_max = state.w_max
    k = ((w_max * (1.0 - CUBIC_BETA)) / CUBIC_C) ** (1.0 / 3.0)
    t = (now - state.epoch_start) / 1e6
    target = CUBIC_C * (t - k) ** 3 + w_max
    w = state.cwnd / mss
    cubic = (target - w) / w if target > w else 0.01 / w
    reno = 1.0 / w
    return max(cubic, reno) * bytes_acked


def tcp_on_ack(state: TcpState, bytes_acked: int, now: Optional[int] = None) -> TcpState:
    """Window growth on new data acked.  Mutates and returns ``state``.

    Fast-recovery exit is driven by the sender (it knows the recovery point);
    no growth happens while in FastRecovery.
    """
    if bytes_acked <= 0:
        raise ValueError("bytes_acked must be positive")
    state.dup_ack_count = 0
    if state.phase is Phase.FAST_RECOVERY:
        return state
    if state.phase is Phase.SLOW_START:
        state.cwnd += bytes_acked
        if state.cwnd >= state.ssthresh:
            state.phase = Phase.CONGESTION_AVOIDANCE
        return state
    if state.flavor is Flavor.CUBIC and now is not None:
        state.cwnd += _cubic_increment(state, bytes_acked, now)
    else:
        state.cwnd += state.mss * bytes_acked / state.cwnd
    return state


def tcp_on_loss(state: TcpState, kind: LossKind) -> TcpState:
    mss = state.mss
    if state.flavor is Flavor.CUBIC:
        state.w_max = state.cwnd / mss
        state.epoch_start = None
        reduced = state.cwnd * CUBIC_BETA
    else:
        reduced = state.cwnd / 2.0
    state.ssthresh = max(reduced, 2.0 * mss)
    state.dup_ack_count = 0
    if kind is LossKind.TRIPLE_DUP_ACK:
        state.cwnd = state.ssthresh
        state.phase = Phase.FAST_RECOVERY
    else:
        state.cwnd = float(mss)
        state.phase = Phase.SLOW_START
    return state


def tcp_exit_recovery(state: TcpState) -> TcpState:
    state.cwnd = max(state.ssthresh, float(state.mss))
    state.phase = Phase.CONGESTION_AVOIDANCE
    return state
