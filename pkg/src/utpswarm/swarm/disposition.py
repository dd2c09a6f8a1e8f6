"""Transport disposition bitmask and pairwise connection negotiation."""

from __future__ import annotations

import enum
from typing import Optional

from ..transport.link import Protocol


class Disposition(enum.IntFlag):
    OUT_TCP = 1
    OUT_UTP = 2
    IN_TCP = 4
    IN_UTP = 8
    NEW_HEADER = 16  # carried, no behavioural effect


DEFAULT = 31
TCP_ONLY = 5
UTP_ONLY = 10
PREFER_TCP = 13
PREFER_UTP = 14

PRESETS = {
    "DEFAULT": DEFAULT,
    "TCP_ONLY": TCP_ONLY,
    "UTP_ONLY": UTP_ONLY,
    "PREFER_TCP": PREFER_TCP,
    "PREFER_UTP": PREFER_UTP,
}


def check_disposition(value: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= 31:
        raise ValueError(f"disposition must be an integer in [0, 31], got {value!r}")
    return value


def utp_feasible(a: int, b: int) -> bool:
    return bool((a & 2 and b & 8) or (b & 2 and a & 8))


def tcp_feasible(a: int, b: int) -> bool:
    return bool((a & 1 and b & 4) or (b & 1 and a & 4))


def negotiate_connection(a: int, b: int) -> Optional[Protocol]:
    """Transport used between two peers, or None if they cannot talk.

    uTP wins whenever it can be opened in either direction; the surviving
    connection carries data both ways regardless of who opened it.
    """
    check_disposition(a)
    check_disposition(b)
    if utp_feasible(a, b):
        return Protocol.UTP
    if tcp_feasible(a, b):
        return Protocol.TCP
    return None


def opener(a: int, b: int, protocol: Protocol) -> int:
    """Which side (0 for ``a``, 1 for ``b``) opens the connection.  When both
    sides would attempt it, ``a`` (the lower peer id by convention) wins."""
    out_flag, in_flag = (2, 8) if protocol is Protocol.UTP else (1, 4)
    if a & out_flag and b & in_flag:
        return 0
    if b & out_flag and a & in_flag:
        return 1
    raise ValueError(f"{protocol.value} infeasible between {a} and {b}")
