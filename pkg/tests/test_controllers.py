import math

import pytest
from hypothesis import given, settings, strategies as st

from utpswarm.transport.ledbat import (LedbatState, ledbat_observe, ledbat_on_ack,
                                       ledbat_on_loss, ledbat_on_timeout)
from utpswarm.transport.tcp import (Flavor, LossKind, Phase, TcpState, tcp_exit_recovery,
                                    tcp_on_ack, tcp_on_loss)

MSS = 1448
TARGET = 100_000


def scalar_ledbat_rtt(cwnd, qd, target, gain=1.0, mss=MSS):
    """Independent oracle: one RTT worth of per-segment acks, qd held fixed."""
    w = cwnd
    remaining = cwnd
    while remaining > 1e-9:
        acked = min(mss, remaining)
        w = max(w + gain * (1 - qd / target) * mss * acked / w, mss)
        remaining -= acked
    return w


def feed_rtt(state, qd, base=10_000):
    remaining = state.cwnd
    while remaining > 1e-9:
        acked = min(MSS, remaining)
        ledbat_on_ack(state, base + qd, acked)
        remaining -= acked


def primed(cwnd):
    s = LedbatState.initial(MSS, TARGET)
    s.cwnd = float(cwnd)
    ledbat_observe(s, 10_000)  # base delay 10 ms
    return s


def test_ledbat_equilibrium_at_target():
    s = primed(10 * MSS)
    ledbat_on_ack(s, 10_000 + TARGET, MSS)
    assert s.cwnd == 10 * MSS


@pytest.mark.parametrize("qd, sign", [(0, +1), (2 * TARGET, -1)])
def test_ledbat_one_rtt_matches_scalar_oracle(qd, sign):
    s = primed(20 * MSS)
    expected = scalar_ledbat_rtt(20 * MSS, qd, TARGET)
    feed_rtt(s, qd)
    assert s.cwnd == pytest.approx(expected, rel=1e-12)
    # about one segment per RTT, in the direction of the error
    assert (s.cwnd - 20 * MSS) * sign == pytest.approx(MSS, rel=0.03)


def test_ledbat_halving_and_floor():
    s = LedbatState.initial(MSS, TARGET)
    s.cwnd = 20 * MSS
    assert ledbat_on_loss(s).cwnd == 10 * MSS
    s.cwnd = MSS
    assert ledbat_on_loss(s).cwnd == MSS


def test_ledbat_loss_reacts_once_per_rtt():
    s = LedbatState.initial(MSS, TARGET)
    s.cwnd = 32 * MSS
    ledbat_on_loss(s, now=1_000, rtt=50_000)
    ledbat_on_loss(s, now=20_000, rtt=50_000)
    assert s.cwnd == 16 * MSS
    ledbat_on_loss(s, now=60_000, rtt=50_000)
    assert s.cwnd == 8 * MSS


def test_ledbat_timeout_collapses_to_one_segment():
    s = LedbatState.initial(MSS, TARGET)
    s.cwnd = 30 * MSS
    assert ledbat_on_timeout(s).cwnd == MSS


def test_ledbat_rejects_bad_input():
    s = LedbatState.initial()
    with pytest.raises(ValueError):
        ledbat_on_ack(s, -1, MSS)
    with pytest.raises(ValueError):
        ledbat_on_ack(s, 10, 0)


@given(st.lists(st.integers(0, 2_000_000), min_size=1, max_size=50), st.randoms())
def test_base_delay_is_order_free(samples, rnd):
    a, b = LedbatState.initial(), LedbatState.initial()
    shuffled = list(samples)
    rnd.shuffle(shuffled)
    for x in samples:
        ledbat_on_ack(a, x, MSS)
    for x in shuffled:
        ledbat_on_ack(b, x, MSS)
    assert a.base_delay == b.base_delay == min(samples)


@given(st.lists(st.tuples(st.sampled_from(["ack", "loss", "timeout"]),
                          st.integers(0, 3_000_000), st.integers(1, 5 * MSS)), max_size=200))
def test_ledbat_cwnd_never_below_one_segment(script):
    s = LedbatState.initial(MSS, TARGET)
    for op, owd, nbytes in script:
        if op == "ack":
            ledbat_on_ack(s, owd, nbytes)
        elif op == "loss":
            ledbat_on_loss(s)
        else:
            ledbat_on_timeout(s)
        assert s.cwnd >= MSS


def scalar_reno(cwnd, ssthresh, acks):
    """Oracle: per-segment slow start / congestion avoidance recurrence."""
    for _ in range(acks):
        cwnd = cwnd + MSS if cwnd < ssthresh else cwnd + MSS * MSS / cwnd
    return cwnd


def test_tcp_slow_start_step():
    s = TcpState.initial(MSS)
    s.cwnd = 10 * MSS
    tcp_on_ack(s, MSS)
    assert s.cwnd == 11 * MSS == scalar_reno(10 * MSS, math.inf, 1)


def test_tcp_congestion_avoidance_one_rtt():
    s = TcpState.initial(MSS)
    s.cwnd = 10 * MSS
    s.ssthresh = 5 * MSS
    s.phase = Phase.CONGESTION_AVOIDANCE
    for _ in range(10):
        tcp_on_ack(s, MSS)
    assert s.cwnd == pytest.approx(scalar_reno(10 * MSS, 5 * MSS, 10), rel=1e-12)
    assert s.cwnd == pytest.approx(11 * MSS, rel=0.05)


def test_tcp_crossing_ssthresh_enters_avoidance():
    s = TcpState.initial(MSS)
    s.cwnd = 9 * MSS
    s.ssthresh = 10 * MSS
    tcp_on_ack(s, MSS)
    assert s.phase is Phase.CONGESTION_AVOIDANCE


@pytest.mark.parametrize("cwnd, kind, after, ssthresh", [
    (32, LossKind.TRIPLE_DUP_ACK, 16, 16),
    (32, LossKind.TIMEOUT, 1, 16),
    (2, LossKind.TRIPLE_DUP_ACK, 2, 2),
])
def test_tcp_loss_response(cwnd, kind, after, ssthresh):
    s = TcpState.initial(MSS)
    s.cwnd = cwnd * MSS
    tcp_on_loss(s, kind)
    assert s.cwnd == after * MSS
    assert s.ssthresh == ssthresh * MSS
    expected = Phase.FAST_RECOVERY if kind is LossKind.TRIPLE_DUP_ACK else Phase.SLOW_START
    assert s.phase is expected


def test_tcp_no_growth_during_recovery():
    s = TcpState.initial(MSS)
    s.cwnd = 32 * MSS
    tcp_on_loss(s, LossKind.TRIPLE_DUP_ACK)
    tcp_on_ack(s, MSS)
    assert s.cwnd == 16 * MSS
    tcp_exit_recovery(s)
    assert s.phase is Phase.CONGESTION_AVOIDANCE


def test_cubic_backs_off_less_than_reno():
    s = TcpState.initial(MSS, flavor=Flavor.CUBIC)
    s.cwnd = 100 * MSS
    tcp_on_loss(s, LossKind.TRIPLE_DUP_ACK)
    assert s.cwnd == pytest.approx(70 * MSS)


def test_cubic_grows_at_least_like_reno():
    cubic = TcpState.initial(MSS, flavor=Flavor.CUBIC)
    reno = TcpState.initial(MSS)
    for s in (cubic, reno):
        s.cwnd = 40 * MSS
        tcp_on_loss(s, LossKind.TRIPLE_DUP_ACK)
        tcp_exit_recovery(s)
    t = 0
    for _ in range(2000):
        t += 5_000
        tcp_on_ack(cubic, MSS, t)
        tcp_on_ack(reno, MSS, t)
    assert cubic.cwnd >= reno.cwnd


@given(st.lists(st.tuples(st.sampled_from(["ack", "dup", "rto", "exit"]), st.integers(1, 4 * MSS)),
                max_size=200), st.sampled_from(list(Flavor)))
def test_tcp_invariants(script, flavor):
    s = TcpState.initial(MSS, flavor=flavor)
    t = 0
    for op, nbytes in script:
        t += 1000
        if op == "ack":
            tcp_on_ack(s, nbytes, t)
        elif op == "dup":
            tcp_on_loss(s, LossKind.TRIPLE_DUP_ACK)
        elif op == "rto":
            tcp_on_loss(s, LossKind.TIMEOUT)
        elif s.phase is Phase.FAST_RECOVERY:
            tcp_exit_recovery(s)
        assert s.cwnd >= MSS
        if s.phase is Phase.SLOW_START:
            assert s.cwnd < s.ssthresh
