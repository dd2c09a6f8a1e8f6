"""Flash-crowd swarm: peers, negotiated connections and the BitTorrent
message exchange driven over the transport layer."""

from __future__ import annotations

import logging
from typing import Optional

from ..config import ScenarioConfig, per_peer_layout
from ..sim import US_PER_S, DeadlockError, EventKind, Simulator
from ..transport.flow import Flow
from ..transport.ledbat import LedbatState
from ..transport.link import CONTROL_SIZE, AccessLink, EnqueueResult, Packet, PacketKind, Protocol
from ..transport.tcp import Flavor, TcpState
from .disposition import negotiate_connection, opener, tcp_feasible
from .peer import Connection, Peer, Role, Side, pick_block, rechoke

log = logging.getLogger(__name__)

# control message kinds
HANDSHAKE = "handshake"
HANDSHAKE_REPLY = "handshake_reply"
HAVE = "have"
INTERESTED = "interested"
NOT_INTERESTED = "not_interested"
CHOKE = "choke"
UNCHOKE = "unchoke"
REQUEST = "request"

CONTROL_RETRY_MIN_US = 200_000


class Swarm:
    def __init__(self, config: ScenarioConfig, seed: int):
        self.config = config
        self.seed = seed
        self.sim = Simulator(seed)
        self.rng_pieces = self.sim.rng.stream("piece-selection")
        self.rng_optimistic = self.sim.rng.stream("optimistic-unchoke")
        self.rng_shuffle = self.sim.rng.stream("peer-shuffle")
        self.rng_race = self.sim.rng.stream("transport-race")

        cfg = config
        self.n_chunks = cfg.chunk_count
        self.blocks_per_chunk = cfg.chunk_size // cfg.block_size
        self.n_blocks = -(-cfg.file_size // cfg.block_size)
        last_block = cfg.file_size - (self.n_blocks - 1) * cfg.block_size
        self.block_sizes = [cfg.block_size] * self.n_blocks
        self.block_sizes[-1] = last_block

        self.peers: list[Peer] = []
        for pid, (klass, disp, bps, target) in enumerate(per_peer_layout(cfg)):
            role = Role.SEED if pid < cfg.seed_count else Role.LEECHER
            link = AccessLink(self.sim, bps, prop_delay_us=cfg.base_owd_us,
                              buffer_seconds=cfg.buffer_seconds, name=f"peer{pid}")
            peer = Peer(pid, role, klass, disp, link, target, self.n_chunks,
                        self.blocks_per_chunk, self.n_blocks, cfg.pipeline_depth,
                        cfg.upload_slots)
            for c in range(self.n_chunks):
                first = c * self.blocks_per_chunk
                peer.chunk_missing[c] = 0 if role is Role.SEED else \
                    min(self.blocks_per_chunk, self.n_blocks - first)
            self.peers.append(peer)
        self.connections: list[Connection] = []
        self.incomplete = sum(1 for p in self.peers if p.role is Role.LEECHER)
        self.rate_windows = max(1, int(round(cfg.rate_window_s / cfg.rechoke_interval_s)))
        self.control_sent = 0
        self.control_dropped = 0
        self._initialized = False

    # ------------------------------------------------------------- set-up
    def flash_crowd_init(self) -> None:
        """Every peer joins at t=0; the tracker hands out the full peer list
        and each pair negotiates one transport."""
        if self._initialized:
            return
        self._initialized = True
        cfg = self.config
        peers = self.peers
        for i, a in enumerate(peers):
            for b in peers[i + 1:]:
                proto = negotiate_connection(a.disposition, b.disposition)
                if proto is None:
                    continue
                fallback = False
                if (proto is Protocol.UTP and cfg.utp_connect_failure > 0.0
                        and tcp_feasible(a.disposition, b.disposition)
                        and self.rng_race.random() < cfg.utp_connect_failure):
                    proto = Protocol.TCP
                    fallback = True
                who = opener(a.disposition, b.disposition, proto)
                self._connect(a, b, proto, a.id if who == 0 else b.id, fallback)
        for p in peers:
            self.sim.schedule(0, EventKind.TRACKER_ANNOUNCE, self._announce, p)
        step = int(cfg.rechoke_interval_s * US_PER_S)
        self.sim.schedule(step, EventKind.RECHOKE_TICK, self._rechoke_tick, step, daemon=True)
        ostep = int(cfg.optimistic_interval_s * US_PER_S)
        self.sim.schedule(ostep, EventKind.OPTIMISTIC_UNCHOKE_TICK, self._optimistic_tick,
                          ostep, daemon=True)

    def _controller(self, proto: Protocol, sender: Peer):
        cfg = self.config
        if proto is Protocol.UTP:
            return LedbatState.initial(cfg.mss, sender.target_us, cfg.ledbat_gain,
                                       cfg.ledbat_init_segments)
        return TcpState.initial(cfg.mss, cfg.tcp_init_segments, Flavor(cfg.tcp_flavor))

    def _connect(self, a: Peer, b: Peer, proto: Protocol, opened_by: int,
                 fallback: bool) -> Connection:
        conn = Connection(len(self.connections), a, b, proto, opened_by, fallback)
        sa = Side(a, b, conn, self.n_chunks)
        sb = Side(b, a, conn, self.n_chunks)
        sa.other, sb.other = sb, sa
        conn.side_a, conn.side_b = sa, sb
        cfg = self.config
        fab = Flow(self.sim, conn.conn_id * 2, proto, self._controller(proto, a), a.id, b.id,
                   a.link, b.link, self._block_handler(sb),
                   self._sent_handler(sa), min_rto=cfg.min_rto_us)
        fba = Flow(self.sim, conn.conn_id * 2 + 1, proto, self._controller(proto, b), b.id,
                   a.id, b.link, a.link, self._block_handler(sa), self._sent_handler(sb),
                   min_rto=cfg.min_rto_us)
        sa.out_flow, sb.in_flow = fab, fab
        sb.out_flow, sa.in_flow = fba, fba
        a.sides[b.id] = sa
        b.sides[a.id] = sb
        self.connections.append(conn)
        return conn

    def _block_handler(self, side: Side):
        def handler(block: int, size: int) -> None:
            self.on_block_received(side, block, size)
        return handler

    def _sent_handler(self, side: Side):
        sizes = self.block_sizes

        def handler(block: int) -> None:
            side.bytes_up += sizes[block]
        return handler

    def _announce(self, peer: Peer) -> None:
        # the tracker returns everyone; open the connections this peer initiates
        for side in peer.sides.values():
            if side.conn.opened_by == peer.id:
                self.send_control(side, HANDSHAKE, bytes(peer.have))

    # ------------------------------------------------------------ control
    def send_control(self, side: Side, kind: str, arg=None) -> None:
        side.ctrl_seq += 1
        self._emit_control(side, (kind, arg, side.ctrl_seq))

    def _emit_control(self, side: Side, payload: tuple) -> None:
        peer = side.peer
        pkt = Packet(peer.id, side.remote.id, side.conn.conn_id, side.conn.protocol,
                     PacketKind.CONTROL, CONTROL_SIZE, self.sim.now, self._control_handler,
                     payload=(side.other, payload))
        self.control_sent += 1
        if peer.link.enqueue(pkt) is EnqueueResult.DROPPED:
            self.control_dropped += 1
            rto = side.out_flow.rto if side.out_flow.srtt is not None else CONTROL_RETRY_MIN_US
            self.sim.schedule_in(max(rto, CONTROL_RETRY_MIN_US), EventKind.TIMER_EXPIRY,
                                 self._emit_control, side, payload)

    def _control_handler(self, pkt: Packet) -> None:
        side, (kind, arg, seq) = pkt.payload
        self.on_control(side, kind, arg, seq)

    def on_control(self, side: Side, kind: str, arg, seq: int) -> None:
        """``side`` is the receiving endpoint's view."""
        peer = side.peer
        if kind == REQUEST:
            if not side.am_choking and peer.block_have[arg]:
                side.out_flow.send_message(arg, self.block_sizes[arg])
        elif kind == HAVE:
            self._learn_chunk(side, arg)
        elif kind == INTERESTED or kind == NOT_INTERESTED:
            if seq > side.last_interest_seq:
                side.last_interest_seq = seq
                if kind == INTERESTED:
                    side.peer_interested = True
                    if side.am_choking and len(peer.unchoked) < peer.upload_slots:
                        self._unchoke(side)
                else:
                    side.peer_interested = False
                    if not side.am_choking:
                        self._choke(side)
                        self._fill_slots(peer)
        elif kind == CHOKE or kind == UNCHOKE:
            if seq > side.last_choke_seq:
                side.last_choke_seq = seq
                if kind == UNCHOKE:
                    side.peer_choking = False
                    self.request_scheduler(side)
                else:
                    side.peer_choking = True
                    self._release_requests(side)
        elif kind == HANDSHAKE:
            if not side.established:
                side.established = True
                self._learn_bitfield(side, arg)
                self.send_control(side, HANDSHAKE_REPLY, bytes(peer.have))
                self._update_interest(side)
        elif kind == HANDSHAKE_REPLY:
            self._learn_bitfield(side, arg)
            if not side.established:
                side.established = True
                self._update_interest(side)
        else:
            raise ValueError(f"unknown control message {kind!r}")

    def _learn_bitfield(self, side: Side, bitfield: bytes) -> None:
        for c, held in enumerate(bitfield):
            if held:
                self._learn_chunk(side, c, evaluate=False)
        self._update_interest(side)

    def _learn_chunk(self, side: Side, chunk: int, evaluate: bool = True) -> None:
        if side.remote_have[chunk]:
            return
        side.remote_have[chunk] = 1
        peer = side.peer
        peer.availability[chunk] += 1
        if not peer.have[chunk]:
            side.interesting += 1
            if evaluate:
                self._update_interest(side)
                if not side.peer_choking:
                    self.request_scheduler(side)

    def _update_interest(self, side: Side) -> None:
        if not side.established:
            return
        want = side.interesting > 0
        if want != side.am_interested:
            side.am_interested = want
            self.send_control(side, INTERESTED if want else NOT_INTERESTED)

    # ------------------------------------------------------------ choking
    def _unchoke(self, side: Side) -> None:
        side.am_choking = False
        side.peer.unchoked.append(side)
        self.send_control(side, UNCHOKE)

    def _choke(self, side: Side) -> None:
        side.am_choking = True
        side.peer.unchoked.remove(side)
        if side.peer.optimistic is side:
            side.peer.optimistic = None
        side.out_flow.clear_backlog()
        self.send_control(side, CHOKE)

    def _fill_slots(self, peer: Peer) -> None:
        while len(peer.unchoked) < peer.upload_slots:
            waiting = [s for s in peer.sides.values()
                       if s.established and s.peer_interested and s.am_choking]
            if not waiting:
                return
            waiting.sort(key=lambda s: s.remote.id)
            self._unchoke(waiting[self.rng_optimistic.randrange(len(waiting))])

    def _apply_unchoke_set(self, peer: Peer, new: list[Side]) -> None:
        keep = set(map(id, new))
        for s in list(peer.unchoked):
            if id(s) not in keep:
                self._choke(s)
        for s in new:
            if s.am_choking:
                self._unchoke(s)

    def _rechoke_tick(self, step: int) -> None:
        now = self.sim.now
        for peer in self.peers:
            new = rechoke(peer, now, self.rate_windows, self.rng_shuffle, self.rng_optimistic)
            self._apply_unchoke_set(peer, new)
            for s in peer.sides.values():
                s.history.append((s.bytes_down, s.bytes_up))
        self.sim.schedule(now + step, EventKind.RECHOKE_TICK, self._rechoke_tick, step,
                          daemon=True)

    def _optimistic_tick(self, step: int) -> None:
        now = self.sim.now
        for peer in self.peers:
            new = rechoke(peer, now, self.rate_windows, self.rng_shuffle, self.rng_optimistic,
                          rotate_optimistic=True)
            self._apply_unchoke_set(peer, new)
        self.sim.schedule(now + step, EventKind.OPTIMISTIC_UNCHOKE_TICK, self._optimistic_tick,
                          step, daemon=True)

    # ----------------------------------------------------------- requests
    def request_scheduler(self, side: Side) -> int:
        """Top up outstanding block requests on ``side``; returns how many
        were issued."""
        if side.peer_choking or not side.established:
            return 0
        peer = side.peer
        issued = 0
        depth = peer.pipeline_depth
        requested = side.requested
        while len(requested) < depth:
            block = pick_block(peer, side, self.rng_pieces)
            if block is None:
                break
            requested.add(block)
            self.send_control(side, REQUEST, block)
            issued += 1
        return issued

    def _release_requests(self, side: Side) -> None:
        peer = side.peer
        if not side.requested:
            return
        bpc = self.blocks_per_chunk
        for b in sorted(side.requested, reverse=True):
            if not peer.block_have[b]:
                chunk = b // bpc
                stack = peer.in_progress.get(chunk)
                if stack is not None:
                    stack.append(b)
        side.released |= side.requested
        side.requested.clear()
        for other in peer.sides.values():
            if other is not side and not other.peer_choking:
                self.request_scheduler(other)

    # ------------------------------------------------------------- blocks
    def on_block_received(self, side: Side, block: int, size: int) -> None:
        peer = side.peer
        if block in side.requested:
            side.requested.discard(block)
        elif block in side.released:
            side.released.discard(block)
        else:
            side.unsolicited += 1
            peer.unsolicited += 1
            return
        side.bytes_down += size
        if peer.block_have[block]:
            peer.duplicates += 1
        else:
            peer.block_have[block] = 1
            peer.blocks_received += 1
            chunk = block // self.blocks_per_chunk
            peer.chunk_missing[chunk] -= 1
            if peer.chunk_missing[chunk] == 0:
                self._chunk_complete(peer, chunk)
        self.request_scheduler(side)

    def _chunk_complete(self, peer: Peer, chunk: int) -> None:
        peer.have[chunk] = 1
        peer.n_have += 1
        peer.in_progress.pop(chunk, None)
        for s in peer.sides.values():
            if s.remote_have[chunk]:
                s.interesting -= 1
                self._update_interest(s)
            self.send_control(s, HAVE, chunk)
        if peer.n_have == peer.n_chunks and peer.completion_time is None:
            peer.completion_time = self.sim.now
            self.incomplete -= 1
            log.debug("peer %d complete at %.3f s", peer.id, self.sim.now / US_PER_S)

    # ---------------------------------------------------------------- run
    def disposition_diagnostic(self) -> Optional[dict]:
        """Leechers unable to reach any seed through negotiable pairs."""
        reach = {p.id for p in self.peers if p.role is Role.SEED}
        frontier = list(reach)
        while frontier:
            pid = frontier.pop()
            for other in self.peers[pid].sides:
                if other not in reach:
                    reach.add(other)
                    frontier.append(other)
        stranded = [p.id for p in self.peers if p.id not in reach]
        if not stranded:
            return None
        return {
            "stranded_peers": stranded,
            "dispositions": {p.id: p.disposition for p in self.peers},
            "connections": len(self.connections),
        }

    def run(self) -> int:
        self.flash_crowd_init()
        diag = self.disposition_diagnostic()
        if diag is not None:
            raise DeadlockError("disposition graph leaves leechers without a path to a seed",
                                0, diag)
        limit = int(self.config.time_limit_s * US_PER_S)
        try:
            return self.sim.run_until(lambda: self.incomplete == 0, time_limit=limit)
        except DeadlockError as exc:
            exc.diagnostic = {"incomplete": [p.id for p in self.peers if not p.complete],
                              "now_us": self.sim.now}
            raise
