from __future__ import annotations

import random
from collections import deque

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mpprune.protocol import AppMessage
from mpprune.transport import (ACK_BYTES, DATA_HEADER_BYTES, GbnReceiver, GbnSender, IncompleteMessage, Kind,
                               MsgKey, Packet, TransportError, assemble, fragment, fragment_message, gbn_receive,
                               gbn_step)

KEY = MsgKey(3, 4, 1)

# m=4, W=2, message {1, 2} from 0 to 1, DATA seq 1 dropped on its first
# transmission. Traced by hand: 0 and 1 go out, 1 is lost, ACK(0) opens the
# window for 2, 2 arrives out of order and is answered with ACK(0) again,
# the timer fires and 1 and 2 are resent, then 3 completes the message.
FROZEN_GBN_TRACE = [
    ("data", "000000000000000001000000000004000000050000000000"),
    ("ack", "0100000000000000010000000000040000"),
    ("data", "000000000000000001000000010004000000050000000002"),
    ("drop", 1),
    ("data", "0000000000000000010000000200040000000400000001"),
    ("ack", "0100000000000000010000000200040000"),
    ("timeout", None),
    ("data", "000000000000000001000000010004000000050000000002"),
    ("ack", "0100000000000000010000000100040001"),
    ("data", "0000000000000000010000000200040000000400000001"),
    ("ack", "0100000000000000010000000200040002"),
    ("data", "0000000000000000010000000300040000000400000002"),
    ("ack", "0100000000000000010000000300040003"),
]


def lockstep(sender: GbnSender, receiver: GbnReceiver, drops=frozenset(), drop_rng=None, p=0.0, limit=100000):
    """Drive one sender/receiver pair over a FIFO wire; returns the event trace and deliveries."""
    trace, delivered = [], []
    sent: dict[int, int] = {}
    wire = deque(gbn_step(sender, "send"))
    for _ in range(limit):
        if sender.done or sender.failed:
            break
        assert sender.next_seq - sender.base <= sender.window
        if not wire:
            trace.append(("timeout", None))
            wire.extend(gbn_step(sender, "timeout"))
            continue
        pk = wire.popleft()
        sent[pk.seq] = sent.get(pk.seq, 0) + 1
        trace.append(("data", pk.to_bytes().hex()))
        if (pk.seq, sent[pk.seq]) in drops or (drop_rng is not None and drop_rng.random() < p):
            trace.append(("drop", pk.seq))
            continue
        ack, msg = gbn_receive(receiver, pk)
        if msg is not None:
            delivered.append(msg)
        trace.append(("ack", ack.to_bytes().hex()))
        gbn_step(sender, "ack", ack.ack)
        wire.extend(gbn_step(sender, "send"))
    return trace, delivered


# -- fragmentation -----------------------------------------------------------

def test_single_fragment_is_identity():
    pk = fragment(b"hello", 1, KEY)
    assert len(pk) == 1 and pk[0].chunk == b"hello"


def test_near_equal_split():
    assert [len(p.chunk) for p in fragment(bytes(10), 3, KEY)] == [4, 3, 3]


def test_more_packets_than_bytes_gives_empty_chunks():
    sizes = [len(p.chunk) for p in fragment(b"abc", 5, KEY)]
    assert sizes == [1, 1, 1, 0, 0]


def test_fragment_rejects_nonpositive_m():
    with pytest.raises(ValueError):
        fragment(b"x", 0, KEY)


@given(st.frozensets(st.integers(0, 2 ** 32 - 1), max_size=40), st.sampled_from([1, 10, 20, 30, 50]),
       st.integers(0, 2 ** 16 - 1), st.randoms(use_true_random=False))
def test_roundtrip_shuffled(ids, m, it, rnd):
    msg = AppMessage(9, it, ids)
    packets = fragment_message(msg, 2, m)
    assert b"".join(p.chunk for p in packets) == msg.to_bytes()
    rnd.shuffle(packets)
    assert assemble(packets) == msg


def test_missing_packet_named():
    packets = fragment_message(AppMessage(1, 0, frozenset({1, 2, 3})), 2, 4)
    with pytest.raises(IncompleteMessage) as err:
        assemble(packets[:2] + packets[3:])
    assert err.value.missing == [2]


def test_mixed_keys_rejected():
    a = fragment_message(AppMessage(1, 0, frozenset({1})), 2, 2)
    b = fragment_message(AppMessage(1, 1, frozenset({1})), 2, 2)
    with pytest.raises(TransportError):
        assemble([a[0], b[1]])


def test_malformed_bytes_rejected():
    with pytest.raises(TransportError):
        assemble(fragment(b"\x00\x01", 1, KEY))


def test_padding_survives_assembly():
    msg = AppMessage(5, 2, frozenset({1, 2}))
    packets = fragment_message(msg, 6, 3, pad_to=100)
    assert sum(len(p.chunk) for p in packets) == 100
    assert assemble(packets) == msg


# -- wire format -------------------------------------------------------------

def test_packet_wire_layout():
    p = Packet(MsgKey(1, 2, 3), 4, 5, Kind.DATA, b"\xaa\xbb")
    assert p.to_bytes().hex() == "00" "00000001" "00000002" "0003" "0004" "0005" "00000002" "aabb"
    assert p.wire_size == DATA_HEADER_BYTES + 2 == len(p.to_bytes())
    a = Packet(MsgKey(1, 2, 3), 4, 5, Kind.ACK, ack=-1)
    assert a.to_bytes().hex() == "01" "00000001" "00000002" "0003" "0004" "0005" "ffff"
    assert a.wire_size == ACK_BYTES
    assert Packet.from_bytes(p.to_bytes()) == p
    assert Packet.from_bytes(a.to_bytes()) == a


def test_packet_seq_bounds():
    with pytest.raises(TransportError):
        Packet(KEY, 3, 3)


def test_truncated_packet():
    with pytest.raises(TransportError):
        Packet.from_bytes(b"\x00\x01")


# -- Go-Back-N ---------------------------------------------------------------

def test_lossless_window_covers_message():
    msg = AppMessage(3, 1, frozenset({7, 8}))
    s, r = GbnSender(fragment_message(msg, 4, 4), 8), GbnReceiver(4)
    trace, delivered = lockstep(s, r)
    data = [t for t in trace if t[0] == "data"]
    acks = [t for t in trace if t[0] == "ack"]
    assert len(data) == 4 and len(acks) == 4 and s.retransmissions == 0
    assert delivered == [msg]


def test_scripted_loss_matches_frozen_trace():
    msg = AppMessage(0, 0, frozenset({1, 2}))
    s, r = GbnSender(fragment_message(msg, 1, 4), window=2), GbnReceiver(4)
    trace, delivered = lockstep(s, r, drops={(1, 1)})
    assert trace == FROZEN_GBN_TRACE
    assert delivered == [msg]
    assert s.retransmissions == 2


def test_timeout_resends_in_flight_window():
    pk = fragment(bytes(8), 4, KEY)
    s = GbnSender(pk, 2)
    assert [p.seq for p in gbn_step(s, "send")] == [0, 1]
    gbn_step(s, "ack", 0)
    assert [p.seq for p in gbn_step(s, "send")] == [2]
    assert [p.seq for p in gbn_step(s, "timeout")] == [1, 2]
    assert s.retries_used == 1


def test_stale_ack_ignored():
    s = GbnSender(fragment(bytes(8), 4, KEY), 4)
    gbn_step(s, "send")
    gbn_step(s, "ack", 2)
    state = (s.base, s.next_seq, s.retries_used)
    gbn_step(s, "ack", 0)
    gbn_step(s, "ack", -1)
    assert (s.base, s.next_seq, s.retries_used) == state


def test_ack_beyond_sent_ignored():
    s = GbnSender(fragment(bytes(8), 4, KEY), 2)
    gbn_step(s, "send")
    gbn_step(s, "ack", 3)
    assert s.base == 0


def test_retry_budget_exhaustion():
    s = GbnSender(fragment(bytes(8), 2, KEY), 2, max_retries=2)
    gbn_step(s, "send")
    for _ in range(2):
        assert gbn_step(s, "timeout")
    assert gbn_step(s, "timeout") == [] and s.failed


def test_budget_resets_when_base_advances():
    s = GbnSender(fragment(bytes(8), 3, KEY), 3, max_retries=1)
    gbn_step(s, "send")
    gbn_step(s, "timeout")
    gbn_step(s, "ack", 0)
    assert s.retries_used == 0
    gbn_step(s, "timeout")
    assert not s.failed


def test_bad_event():
    with pytest.raises(ValueError):
        gbn_step(GbnSender(fragment(b"", 1, KEY), 1), "poke")


def test_receiver_discards_out_of_order_and_duplicates():
    pk = fragment(bytes(12), 3, KEY)
    r = GbnReceiver(3)
    ack, msg = gbn_receive(r, pk[1])
    assert ack.ack == -1 and r.expected_seq == 0 and r.chunks == []
    gbn_receive(r, pk[0])
    ack, _ = gbn_receive(r, pk[0])
    assert ack.ack == 0 and r.expected_seq == 1 and len(r.chunks) == 1


def test_receiver_rejects_ack_input():
    with pytest.raises(TransportError):
        gbn_receive(GbnReceiver(1), Packet(KEY, 0, 1, Kind.ACK, ack=0))


@pytest.mark.parametrize("window", [1, 3, 50])
def test_heavy_loss_unbounded_retries_delivers_once(window):
    rng = random.Random(window)
    lost = 0
    for k in range(200):
        msg = AppMessage(k, 0, frozenset(range(k % 7)))
        m = rng.choice([1, 10, 50])
        s, r = GbnSender(fragment_message(msg, 1, m), window, max_retries=None), GbnReceiver(m)
        _, delivered = lockstep(s, r, drop_rng=rng, p=0.3)
        lost += delivered != [msg]
    assert lost == 0
