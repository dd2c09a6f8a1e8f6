import pytest
from hypothesis import given, settings, strategies as st

from utpswarm.sim import DeadlockError, EventKind, RngStreams, SchedulingError, Simulator

K = EventKind.TIMER_EXPIRY


def test_event_at_now_runs_first_among_equal_times():
    sim = Simulator()
    order = []
    sim.schedule(0, K, order.append, "a")
    sim.schedule(0, K, order.append, "b")
    sim.run_until(lambda: len(order) == 2)
    assert order == ["a", "b"]


def test_equal_times_dispatch_by_sequence():
    sim = Simulator()
    order = []
    for _ in range(7):
        sim.schedule(1, K, lambda: None)
    e7 = sim.schedule(5, K, order.append, 7)
    sim.schedule(2, K, lambda: None)
    e9 = sim.schedule(5, K, order.append, 9)
    assert (e7.sequence, e9.sequence) == (7, 9)
    sim.run_until(lambda: len(order) == 2)
    assert order == [7, 9]


def test_scheduling_in_the_past_fails():
    sim = Simulator()
    sim.schedule(4, K, lambda: None)
    sim.run_until(lambda: sim.now == 4)
    with pytest.raises(SchedulingError):
        sim.schedule(3, K, lambda: None)


def test_run_until_condition_already_true():
    assert Simulator().run_until(lambda: True) == 0


def test_run_until_stops_after_condition():
    sim = Simulator()
    seen = []
    for t in (1, 2, 3):
        sim.schedule(t, K, seen.append, t)
    assert sim.run_until(lambda: len(seen) == 2) == 2
    assert seen == [1, 2]


def test_empty_queue_is_a_deadlock():
    sim = Simulator()
    sim.schedule(1, K, lambda: None)
    with pytest.raises(DeadlockError):
        sim.run_until(lambda: False)


def test_daemon_events_alone_do_not_keep_run_alive():
    sim = Simulator()

    def tick():
        sim.schedule(sim.now + 10, K, tick, daemon=True)

    sim.schedule(0, K, tick, daemon=True)
    sim.schedule(25, K, lambda: None)
    with pytest.raises(DeadlockError) as err:
        sim.run_until(lambda: False)
    assert err.value.now == 25


def test_cancelled_event_never_fires():
    sim = Simulator()
    fired = []
    ev = sim.schedule(5, K, fired.append, 1)
    sim.schedule(6, K, fired.append, 2)
    sim.cancel(ev)
    sim.run_until(lambda: 2 in fired)
    assert fired == [2]


def test_time_limit():
    sim = Simulator()
    sim.schedule(10, K, lambda: None)
    sim.schedule(1000, K, lambda: None)
    with pytest.raises(DeadlockError):
        sim.run_until(lambda: False, time_limit=100)
    assert sim.now == 10


def test_rng_substreams_are_independent_and_reproducible():
    a, b = RngStreams(42), RngStreams(42)
    a.stream("x").random()  # drawing from x must not shift y
    assert a.stream("y").random() == b.stream("y").random()
    assert RngStreams(1).stream("y").random() != RngStreams(2).stream("y").random()


@settings(max_examples=60)
@given(st.lists(st.integers(0, 1000), min_size=1, max_size=60))
def test_clock_monotone_and_each_event_once(times):
    sim = Simulator()
    fired = []
    for i, t in enumerate(times):
        sim.schedule(t, K, lambda i=i: fired.append((sim.now, i)))
    sim.run_until(lambda: len(fired) == len(times))
    stamps = [t for t, _ in fired]
    assert stamps == sorted(stamps)
    assert sorted(i for _, i in fired) == list(range(len(times)))
    # ties in insertion order
    for (t1, i1), (t2, i2) in zip(fired, fired[1:]):
        if t1 == t2:
            assert i1 < i2
