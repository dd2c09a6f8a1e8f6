"""One direction of a connection: a window-limited reliable byte stream.

The sender segments queued application messages (blocks), releases segments
while the window allows, and recovers losses with triple-duplicate-ack fast
retransmit (NewReno partial-ack style) and a retransmission timer.  The
receiver acks every data packet cumulatively; each ack echoes the data
packet's one-way delay and send timestamp.
"""

from __future__ import annotations

from typing import Any, Callable, Optional, Union

from ..sim import EventKind, Simulator
from .ledbat import LedbatState, ledbat_on_ack, ledbat_on_loss, ledbat_on_timeout
from .link import ACK_SIZE, AccessLink, Packet, PacketKind, Protocol
from .tcp import LossKind, TcpState, tcp_exit_recovery, tcp_on_ack, tcp_on_loss

HEADER = 52
MIN_RTO_US = 200_000
INITIAL_RTO_US = 1_000_000
MAX_RTO_US = 60_000_000
DUPACK_THRESHOLD = 3

Controller = Union[LedbatState, TcpState]


class Flow:
    def __init__(self, sim: Simulator, flow_id: int, protocol: Protocol, controller: Controller,
                 src: int, dst: int, data_link: AccessLink, ack_link: AccessLink,
                 on_message: Callable[[Any, int], Any],
                 on_send: Optional[Callable[[Any], Any]] = None,
                 min_rto: int = MIN_RTO_US, rto_multiplier: float = 4.0):
        self.sim = sim
        self.flow_id = flow_id
        self.protocol = protocol
        self.cc = controller
        self.is_ledbat = isinstance(controller, LedbatState)
        self.mss = controller.mss
        self.src = src
        self.dst = dst
        self.data_link = data_link
        self.ack_link = ack_link
        self.on_message = on_message  # receiver side: (message, bytes) delivered in order
        self.on_send = on_send  # sender side: message fully handed to the network
        self.min_rto = min_rto
        self.rto_multiplier = rto_multiplier

        # application queue: (message, size) not yet segmented
        self.backlog: list[tuple[Any, int]] = []
        self._backlog_head = 0
        self.backlog_bytes = 0
        # segment store, indexed by sequence number
        self.seg_size: list[int] = []
        self.seg_msg: list[Any] = []  # message object on the final segment of a message
        self.seg_msg_bytes: list[int] = []
        self.snd_una = 0
        self.snd_nxt = 0
        self.flight = 0
        self.dupacks = 0
        self.recover = -1
        self.in_recovery = False
        # NewReno window inflation during fast recovery, kept outside the
        # controller so its cwnd stays the post-loss value
        self.inflation = 0
        self._partial_acks = 0
        self.srtt: Optional[float] = None
        self.rto = INITIAL_RTO_US
        self._backoff = 1
        self._rto_deadline: Optional[int] = None
        self._timer_pending = False
        # receiver
        self.rcv_nxt = 0
        self.ooo: set[int] = set()
        # counters
        self.data_pkts_sent = 0
        self.retransmits = 0
        self.fast_retransmits = 0
        self.timeouts = 0
        self.delivered_bytes = 0
        self.duplicate_segments = 0

    # ------------------------------------------------------------------ sender
    @property
    def cwnd(self) -> float:
        return self.cc.cwnd

    @property
    def idle(self) -> bool:
        return self.snd_una == len(self.seg_size) and self._backlog_head == len(self.backlog)

    def send_message(self, message: Any, size: int) -> None:
        self.backlog.append((message, size))
        self.backlog_bytes += size
        self.try_send()

    def clear_backlog(self) -> list:
        """Drop application messages that have not been segmented yet."""
        dropped = [m for m, _ in self.backlog[self._backlog_head:]]
        self.backlog = []
        self._backlog_head = 0
        self.backlog_bytes = 0
        return dropped

    def _segment_next_message(self) -> bool:
        if self._backlog_head >= len(self.backlog):
            return False
        message, size = self.backlog[self._backlog_head]
        self._backlog_head += 1
        self.backlog_bytes -= size
        if self._backlog_head > 64 and self._backlog_head * 2 > len(self.backlog):
            del self.backlog[:self._backlog_head]
            self._backlog_head = 0
        mss = self.mss
        seg_size = self.seg_size
        seg_msg = self.seg_msg
        seg_msg_bytes = self.seg_msg_bytes
        remaining = size
        while remaining > mss:
            seg_size.append(mss)
            seg_msg.append(None)
            seg_msg_bytes.append(0)
            remaining -= mss
        seg_size.append(remaining)
        seg_msg.append(message)
        seg_msg_bytes.append(size)
        if self.on_send is not None:
            self.on_send(message)
        return True

    def try_send(self) -> None:
        cc = self.cc
        seg_size = self.seg_size
        window = cc.cwnd + self.inflation
        if window < self.mss:
            window = self.mss
        while True:
            nxt = self.snd_nxt
            if nxt >= len(seg_size) and not self._segment_next_message():
                break
            size = seg_size[nxt]
            if self.flight > 0 and self.flight + size > window:
                break
            self.snd_nxt = nxt + 1
            self.flight += size
            self._transmit(nxt)
        if self.is_ledbat:
            cc.flightsize = self.flight

    def _transmit(self, seq: int, retransmission: bool = False) -> None:
        sim = self.sim
        now = sim.now
        pkt = Packet(self.src, self.dst, self.flow_id, self.protocol, PacketKind.DATA,
                     self.seg_size[seq] + HEADER, now, self.on_data, seq=seq)
        self.data_pkts_sent += 1
        if retransmission:
            self.retransmits += 1
        self.data_link.enqueue(pkt)
        if self._rto_deadline is None:
            self._arm_timer(now)

    def _arm_timer(self, now: int) -> None:
        self._rto_deadline = now + self.rto * self._backoff
        if self._rto_deadline > now + MAX_RTO_US:
            self._rto_deadline = now + MAX_RTO_US
        if not self._timer_pending:
            self._timer_pending = True
            self.sim.schedule(self._rto_deadline, EventKind.TIMER_EXPIRY, self._on_timer)

    def _on_timer(self) -> None:
        self._timer_pending = False
        if self.snd_una >= self.snd_nxt or self._rto_deadline is None:
            self._rto_deadline = None
            return
        now = self.sim.now
        if now < self._rto_deadline:
            self._timer_pending = True
            self.sim.schedule(self._rto_deadline, EventKind.TIMER_EXPIRY, self._on_timer)
            return
        self.timeouts += 1
        if self.is_ledbat:
            ledbat_on_timeout(self.cc, now)
        else:
            tcp_on_loss(self.cc, LossKind.TIMEOUT)
        self.in_recovery = False
        self.inflation = 0
        self.dupacks = 0
        self._backoff = min(self._backoff * 2, 64)
        # go-back-N from the first unacknowledged segment
        self._rto_deadline = None
        self.snd_nxt = self.snd_una + 1
        self.flight = self.seg_size[self.snd_una]
        self._transmit(self.snd_una, retransmission=True)
        self.try_send()

    def on_ack(self, pkt: Packet) -> None:
        ack = pkt.ack
        now = self.sim.now
        cc = self.cc
        if ack > self.snd_una:
            seg_size = self.seg_size
            acked = 0
            for s in range(self.snd_una, ack):
                acked += seg_size[s]
            if ack >= self.snd_nxt:
                # may exceed snd_nxt after a go-back-N reset
                self.snd_nxt = ack
                self.flight = 0
            else:
                self.flight -= acked
            self.snd_una = ack
            self.dupacks = 0
            self._backoff = 1
            sample = now - pkt.echo_ts
            if self.srtt is None:
                self.srtt = float(sample)
            else:
                self.srtt += (sample - self.srtt) * 0.125
            rto = int(self.rto_multiplier * self.srtt)
            self.rto = rto if rto > self.min_rto else self.min_rto
            if self.in_recovery:
                if ack >= self.recover:
                    self.in_recovery = False
                    self.inflation = 0
                    if not self.is_ledbat:
                        tcp_exit_recovery(cc)
                else:
                    # partial ack: next hole is lost too; deflate by what left
                    self.inflation += self.mss - acked
                    self._partial_acks += 1
                    self._transmit(ack, retransmission=True)
                    if self.is_ledbat:
                        ledbat_on_ack(cc, pkt.owd, acked)
            if not self.in_recovery:
                if self.is_ledbat:
                    ledbat_on_ack(cc, pkt.owd, acked)
                else:
                    tcp_on_ack(cc, acked, now)
            if self.snd_una >= self.snd_nxt:
                self._rto_deadline = None
            elif not self.in_recovery or self._partial_acks <= 1:
                # impatient variant: only the first partial ack restarts the
                # timer, so a large burst of losses ends in a timeout
                self._arm_timer(now)
        elif ack == self.snd_una and self.snd_nxt > self.snd_una:
            self.dupacks += 1
            if not self.is_ledbat:
                cc.dup_ack_count = self.dupacks
            if self.in_recovery:
                self.inflation += self.mss
            elif self.dupacks == DUPACK_THRESHOLD:
                self.fast_retransmits += 1
                self.in_recovery = True
                self.inflation = DUPACK_THRESHOLD * self.mss
                self._partial_acks = 0
                self.recover = self.snd_nxt
                if self.is_ledbat:
                    ledbat_on_loss(cc, now, int(self.srtt) if self.srtt else None)
                else:
                    tcp_on_loss(cc, LossKind.TRIPLE_DUP_ACK)
                self._transmit(self.snd_una, retransmission=True)
        self.try_send()

    # ---------------------------------------------------------------- receiver
    def on_data(self, pkt: Packet) -> None:
        now = self.sim.now
        seq = pkt.seq
        if seq == self.rcv_nxt:
            self._deliver(seq)
            nxt = seq + 1
            ooo = self.ooo
            while nxt in ooo:
                ooo.discard(nxt)
                self._deliver(nxt)
                nxt += 1
            self.rcv_nxt = nxt
        elif seq > self.rcv_nxt:
            if seq in self.ooo:
                self.duplicate_segments += 1
            else:
                self.ooo.add(seq)
        else:
            self.duplicate_segments += 1
        ack = Packet(self.dst, self.src, self.flow_id, self.protocol, PacketKind.ACK, ACK_SIZE,
                     now, self.on_ack, ack=self.rcv_nxt, echo_ts=pkt.send_timestamp,
                     owd=now - pkt.send_timestamp)
        self.ack_link.enqueue(ack)

    def _deliver(self, seq: int) -> None:
        self.delivered_bytes += self.seg_size[seq]
        msg = self.seg_msg[seq]
        if msg is not None:
            self.on_message(msg, self.seg_msg_bytes[seq])
