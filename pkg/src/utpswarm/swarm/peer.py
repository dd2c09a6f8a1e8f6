"""Peer state, per-connection views, piece selection and choking."""

from __future__ import annotations

import enum
import random
from collections import deque
from typing import TYPE_CHECKING, Optional

from ..transport.link import AccessLink, Protocol

if TYPE_CHECKING:
    from ..transport.flow import Flow


class Role(enum.Enum):
    SEED = "Seed"
    LEECHER = "Leecher"


class Side:
    """One endpoint's view of a connection."""

    __slots__ = ("peer", "remote", "conn", "other", "out_flow", "in_flow", "established",
                 "remote_have", "interesting", "am_interested", "am_choking",
                 "peer_interested", "peer_choking", "requested", "released", "bytes_down",
                 "bytes_up", "history", "ctrl_seq", "last_interest_seq", "last_choke_seq",
                 "unsolicited")

    def __init__(self, peer: "Peer", remote: "Peer", conn: "Connection", n_chunks: int):
        self.peer = peer
        self.remote = remote
        self.conn = conn
        self.other: Optional[Side] = None
        self.out_flow: Optional[Flow] = None
        self.in_flow: Optional[Flow] = None
        self.established = False
        self.remote_have = bytearray(n_chunks)
        self.interesting = 0  # chunks the remote holds that we lack
        self.am_interested = False
        self.am_choking = True
        self.peer_interested = False
        self.peer_choking = True
        self.requested: set[int] = set()
        self.released: set[int] = set()
        self.bytes_down = 0
        self.bytes_up = 0
        self.history: deque = deque(maxlen=8)
        self.ctrl_seq = 0
        self.last_interest_seq = -1
        self.last_choke_seq = -1
        self.unsolicited = 0

    def recent(self, windows: int, upload: bool) -> int:
        """Bytes moved over the last ``windows`` rechoke periods."""
        current = self.bytes_up if upload else self.bytes_down
        hist = self.history
        if len(hist) < windows:
            return current
        past = hist[-windows]
        return current - (past[1] if upload else past[0])

    def __repr__(self) -> str:
        return f"Side({self.peer.id}->{self.remote.id}, {self.conn.protocol.value})"


class Connection:
    __slots__ = ("conn_id", "a", "b", "protocol", "opened_by", "side_a", "side_b",
                 "fallback")

    def __init__(self, conn_id: int, a: "Peer", b: "Peer", protocol: Protocol,
                 opened_by: int, fallback: bool = False):
        self.conn_id = conn_id
        self.a = a
        self.b = b
        self.protocol = protocol
        self.opened_by = opened_by
        self.fallback = fallback  # TCP carried after a failed uTP attempt
        self.side_a: Optional[Side] = None
        self.side_b: Optional[Side] = None

    def __repr__(self) -> str:
        return f"Connection({self.a.id}<->{self.b.id}, {self.protocol.value})"


class Peer:
    def __init__(self, peer_id: int, role: Role, klass: str, disposition: int,
                 link: AccessLink, target_us: int, n_chunks: int, blocks_per_chunk: int,
                 n_blocks: int, pipeline_depth: int, upload_slots: int):
        self.id = peer_id
        self.role = role
        self.klass = klass
        self.disposition = disposition
        self.link = link
        self.target_us = target_us
        self.pipeline_depth = pipeline_depth
        self.upload_slots = upload_slots
        self.n_chunks = n_chunks
        self.blocks_per_chunk = blocks_per_chunk
        seed = role is Role.SEED
        self.have = bytearray([1 if seed else 0]) * n_chunks
        self.n_have = n_chunks if seed else 0
        self.block_have = bytearray([1 if seed else 0]) * n_blocks
        self.chunk_missing = [0] * n_chunks
        self.availability = [0] * n_chunks
        # chunk -> stack of block ids not yet requested
        self.in_progress: dict[int, list[int]] = {}
        self.sides: dict[int, Side] = {}
        self.unchoked: list[Side] = []
        self.optimistic: Optional[Side] = None
        self.completion_time: Optional[int] = None
        self.duplicates = 0
        self.unsolicited = 0
        self.blocks_received = 0

    @property
    def complete(self) -> bool:
        return self.n_have == self.n_chunks

    def __repr__(self) -> str:
        return f"Peer({self.id}, {self.role.value}, d={self.disposition}, have={self.n_have})"


def select_next_chunk(peer: Peer, remote_have, rng: random.Random) -> Optional[int]:
    """Rarest chunk held by the remote that ``peer`` neither holds nor is
    already downloading; uniform random among equally rare candidates."""
    best: list[int] = []
    best_avail = None
    have = peer.have
    in_progress = peer.in_progress
    availability = peer.availability
    for c in range(peer.n_chunks):
        if remote_have[c] and not have[c] and c not in in_progress:
            a = availability[c]
            if best_avail is None or a < best_avail:
                best_avail = a
                best = [c]
            elif a == best_avail:
                best.append(c)
    if not best:
        return None
    if len(best) == 1:
        return best[0]
    return best[rng.randrange(len(best))]


def pick_block(peer: Peer, side: Side, rng: random.Random) -> Optional[int]:
    """Next block to request over ``side``: finish started chunks first, then
    open the rarest new one."""
    block_have = peer.block_have
    remote_have = side.remote_have
    for chunk, stack in peer.in_progress.items():
        if stack and remote_have[chunk]:
            while stack:
                b = stack.pop()
                if not block_have[b]:
                    return b
    chunk = select_next_chunk(peer, remote_have, rng)
    if chunk is None:
        return None
    bpc = peer.blocks_per_chunk
    first = chunk * bpc
    last = min(first + bpc, len(block_have))
    stack = [b for b in range(last - 1, first - 1, -1) if not block_have[b]]
    peer.in_progress[chunk] = stack
    return stack.pop() if stack else None


def rechoke(peer: Peer, now: int, rate_windows: int, rng_shuffle: random.Random,
            rng_optimistic: random.Random, rotate_optimistic: bool = False) -> list[Side]:
    """Choose the upload set: the best ``upload_slots - 1`` interested remotes
    by recent rate plus one optimistic slot.  Returns the new unchoke list;
    the caller applies the choke/unchoke transitions."""
    interested = [s for s in peer.sides.values() if s.established and s.peer_interested]
    slots = peer.upload_slots
    if len(interested) <= slots:
        peer.optimistic = None
        return sorted(interested, key=lambda s: s.remote.id)
    upload = peer.complete
    rng_shuffle.shuffle(interested)
    interested.sort(key=lambda s: s.recent(rate_windows, upload), reverse=True)
    regular = interested[:slots - 1]
    rest = interested[slots - 1:]
    opt = peer.optimistic
    if rotate_optimistic or opt is None or opt not in rest:
        rest.sort(key=lambda s: s.remote.id)
        opt = rest[rng_optimistic.randrange(len(rest))]
    peer.optimistic = opt
    return regular + [opt]
