import itertools

import pytest
from hypothesis import given, strategies as st

from utpswarm.swarm.disposition import (DEFAULT, PREFER_TCP, PREFER_UTP, TCP_ONLY, UTP_ONLY,
                                        Disposition, check_disposition, negotiate_connection,
                                        opener)
from utpswarm.transport.link import Protocol

FLAGS = {"out_tcp": 1, "out_utp": 2, "in_tcp": 4, "in_utp": 8}


def oracle(a, b):
    """Brute force: try every (initiator, protocol) attempt and keep those
    the responder accepts; uTP survives over TCP."""
    def has(d, name):
        return d & FLAGS[name] != 0

    opened = set()
    for init, resp in ((a, b), (b, a)):
        for proto in ("tcp", "utp"):
            if has(init, "out_" + proto) and has(resp, "in_" + proto):
                opened.add(proto)
    if "utp" in opened:
        return Protocol.UTP
    if "tcp" in opened:
        return Protocol.TCP
    return None


def test_full_table_matches_oracle():
    mismatches = [(a, b) for a, b in itertools.product(range(32), repeat=2)
                  if negotiate_connection(a, b) is not oracle(a, b)]
    assert mismatches == []


def test_case_one_prefer_tcp_with_prefer_utp_uses_utp():
    assert negotiate_connection(PREFER_TCP, PREFER_UTP) is Protocol.UTP
    # opened by the uTP-preferring side, then used both ways
    assert opener(PREFER_TCP, PREFER_UTP, Protocol.UTP) == 1


def test_case_two_tcp_only_with_default_uses_tcp():
    assert negotiate_connection(TCP_ONLY, DEFAULT) is Protocol.TCP
    assert negotiate_connection(DEFAULT, TCP_ONLY) is Protocol.TCP


def test_defaults_and_incompatible_pair():
    assert negotiate_connection(DEFAULT, DEFAULT) is Protocol.UTP
    assert negotiate_connection(TCP_ONLY, UTP_ONLY) is None
    assert negotiate_connection(8, DEFAULT) is Protocol.UTP  # accepts incoming uTP only
    assert negotiate_connection(0, 0) is None


def test_preset_values():
    assert (DEFAULT, TCP_ONLY, UTP_ONLY, PREFER_TCP, PREFER_UTP) == (31, 5, 10, 13, 14)
    assert TCP_ONLY == Disposition.OUT_TCP | Disposition.IN_TCP


def test_new_header_bit_is_inert():
    for a, b in itertools.product(range(16), repeat=2):
        assert negotiate_connection(a | 16, b) is negotiate_connection(a, b)


@pytest.mark.parametrize("bad", [-1, 32, 3.0, True])
def test_out_of_range_rejected(bad):
    with pytest.raises(ValueError):
        check_disposition(bad)


@given(st.integers(0, 31), st.integers(0, 31))
def test_symmetric(a, b):
    assert negotiate_connection(a, b) is negotiate_connection(b, a)
