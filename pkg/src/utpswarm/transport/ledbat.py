"""Delay-based LEDBAT/uTP window controller.

Queuing delay is estimated as the difference between the latest one-way
delay sample and the smallest one ever seen; the window is driven toward the
point where that estimate equals ``target``.  Virtual time has no clock drift,
so the base delay is an all-time minimum rather than a rolling history.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

DEFAULT_TARGET_US = 100_000


@dataclass
class LedbatState:
    mss: int = 1448
    target: int = DEFAULT_TARGET_US
    gain: float = 1.0
    cwnd: float = 2 * 1448
    flightsize: int = 0
    base_delay: Optional[int] = None
    last_owd: Optional[int] = None
    last_loss_time: Optional[int] = None

    @classmethod
    def initial(cls, mss: int = 1448, target: int = DEFAULT_TARGET_US,
                gain: float = 1.0, init_segments: int = 2) -> "LedbatState":
        return cls(mss=mss, target=target, gain=gain, cwnd=float(init_segments * mss))

    @property
    def queuing_delay(self) -> int:
        if self.last_owd is None or self.base_delay is None:
            return 0
        return self.last_owd - self.base_delay


def ledbat_observe(state: LedbatState, owd_sample: int) -> int:
    """Fold one OWD sample into the base-delay minimum; returns the queuing
    delay estimate for that sample."""
    if state.base_delay is None or owd_sample < state.base_delay:
        state.base_delay = owd_sample
    state.last_owd = owd_sample
    return owd_sample - state.base_delay


def ledbat_on_ack(state: LedbatState, owd_sample: int, bytes_acked: int) -> LedbatState:
    """Per-ack window update.  Mutates and returns ``state``."""
    if owd_sample < 0:
        raise ValueError("owd_sample must be non-negative")
    if bytes_acked <= 0:
        raise ValueError("bytes_acked must be positive")
    qd = ledbat_observe(state, owd_sample)
    off_target = 1.0 - qd / state.target
    cwnd = state.cwnd + state.gain * off_target * state.mss * bytes_acked / state.cwnd
    state.cwnd = cwnd if cwnd > state.mss else float(state.mss)
    fs = state.flightsize - bytes_acked
    state.flightsize = fs if fs > 0 else 0
    return state


def ledbat_on_loss(state: LedbatState, now: Optional[int] = None,
                   rtt: Optional[int] = None) -> LedbatState:
    """Halve the window, at most once per ``rtt`` when timing is supplied."""
    if now is not None and rtt is not None and state.last_loss_time is not None:
        if now - state.last_loss_time < rtt:
            return state
    if now is not None:
        state.last_loss_time = now
    state.cwnd = max(state.cwnd / 2.0, float(state.mss))
    return state


def ledbat_on_timeout(state: LedbatState, now: Optional[int] = None) -> LedbatState:
    # no ack within the congestion timeout: collapse to one segment
    state.cwnd = float(state.mss)
    if now is not None:
        state.last_loss_time = now
    return state
