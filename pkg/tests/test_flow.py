import pytest

from utpswarm.sim import Simulator
from utpswarm.transport.flow import HEADER, Flow
from utpswarm.transport.ledbat import LedbatState
from utpswarm.transport.link import AccessLink, Protocol
from utpswarm.transport.tcp import TcpState


def make_flow(protocol, capacity=1_000_000, buffer_limit=None):
    sim = Simulator()
    up = AccessLink(sim, capacity, buffer_limit=buffer_limit)
    back = AccessLink(sim, capacity)
    cc = LedbatState.initial() if protocol is Protocol.UTP else TcpState.initial()
    got = []
    flow = Flow(sim, 0, protocol, cc, 0, 1, up, back, lambda m, n: got.append((m, n)))
    return sim, flow, up, got


@pytest.mark.parametrize("protocol", list(Protocol))
def test_messages_delivered_in_order(protocol):
    sim, flow, _, got = make_flow(protocol)
    sizes = [16384, 1000, 5000, 16384]
    for i, size in enumerate(sizes):
        flow.send_message(i, size)
    sim.run_until(lambda: len(got) == len(sizes))
    assert got == list(enumerate(sizes))
    assert flow.delivered_bytes == sum(sizes)


def test_segments_fill_the_mtu():
    sim, flow, up, got = make_flow(Protocol.TCP)
    flow.send_message("m", 1448 * 3)
    sim.run_until(lambda: bool(got))
    assert up.served_bytes == 3 * (1448 + HEADER) == 3 * 1500


@pytest.mark.parametrize("protocol", list(Protocol))
def test_recovers_from_drops(protocol):
    # tiny buffer forces losses; everything must still arrive exactly once
    sim, flow, up, got = make_flow(protocol, buffer_limit=6 * 1500)
    n = 60
    for i in range(n):
        flow.send_message(i, 16384)
    sim.run_until(lambda: len(got) == n, time_limit=600_000_000)
    assert [m for m, _ in got] == list(range(n))
    if protocol is Protocol.TCP:
        assert up.dropped_pkts > 0 and flow.retransmits > 0
    assert up.conservation_ok()


def test_ledbat_flow_keeps_queue_near_target():
    sim, flow, up, got = make_flow(Protocol.UTP)
    for i in range(400):
        flow.send_message(i, 16384)
    sim.run_to(40_000_000)
    assert up.dropped_pkts == 0
    qd = flow.cc.queuing_delay
    assert 50_000 < qd < 150_000
