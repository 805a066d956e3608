"""Multi-packet messaging: fragmentation, reassembly and Go-Back-N endpoints.

Endpoints are plain state machines without clocks. The caller feeds them
events (send the window, an ACK arrived, the retransmission timer fired) and
puts whatever packets they return on the wire.

Packet wire format, big-endian::

    kind:1 sender:4 receiver:4 iteration:2 seq:2 total:2 | DATA: len:4 chunk
                                                         | ACK:  ack:2 (signed)
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .protocol import AppMessage

__all__ = [
    "Kind",
    "MsgKey",
    "Packet",
    "TransportError",
    "IncompleteMessage",
    "DeliveryFailed",
    "fragment",
    "fragment_message",
    "assemble",
    "GbnSender",
    "GbnReceiver",
    "gbn_step",
    "gbn_receive",
    "DATA_HEADER_BYTES",
    "ACK_BYTES",
]


class Kind(enum.IntEnum):
    DATA = 0
    ACK = 1


class MsgKey(NamedTuple):
    sender: int
    receiver: int
    iteration: int


class TransportError(ValueError):
    pass


class IncompleteMessage(TransportError):
    def __init__(self, missing: list[int]):
        super().__init__(f"incomplete message: missing seq {missing}")
        self.missing = missing


class DeliveryFailed(RuntimeError):
    """Retry budget exhausted; the message is counted as lost."""


_PREFIX = struct.Struct(">BIIHHH")
_DATA_LEN = struct.Struct(">I")
_ACK = struct.Struct(">h")
DATA_HEADER_BYTES = _PREFIX.size + _DATA_LEN.size
ACK_BYTES = _PREFIX.size + _ACK.size


@dataclass(frozen=True)
class Packet:
    key: MsgKey
    seq: int
    total: int
    kind: Kind = Kind.DATA
    chunk: bytes = b""
    ack: int = -1

    def __post_init__(self):
        if not 0 <= self.seq < self.total:
            raise TransportError(f"seq {self.seq} outside [0, {self.total})")

    @property
    def wire_size(self) -> int:
        return DATA_HEADER_BYTES + len(self.chunk) if self.kind is Kind.DATA else ACK_BYTES

    def to_bytes(self) -> bytes:
        head = _PREFIX.pack(int(self.kind), self.key.sender, self.key.receiver, self.key.iteration,
                            self.seq, self.total)
        if self.kind is Kind.DATA:
            return head + _DATA_LEN.pack(len(self.chunk)) + self.chunk
        return head + _ACK.pack(self.ack)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Packet":
        if len(data) < _PREFIX.size:
            raise TransportError("truncated packet header")
        kind, sender, receiver, iteration, seq, total = _PREFIX.unpack_from(data)
        key = MsgKey(sender, receiver, iteration)
        body = data[_PREFIX.size:]
        if kind == Kind.DATA:
            (n,) = _DATA_LEN.unpack_from(body)
            chunk = body[_DATA_LEN.size:]
            if len(chunk) != n:
                raise TransportError(f"chunk length {len(chunk)} != announced {n}")
            return cls(key, seq, total, Kind.DATA, bytes(chunk))
        if kind == Kind.ACK:
            if len(body) != _ACK.size:
                raise TransportError("malformed ACK")
            return cls(key, seq, total, Kind.ACK, ack=_ACK.unpack(body)[0])
        raise TransportError(f"unknown packet kind {kind}")


def fragment(data: bytes, m: int, key: MsgKey = MsgKey(0, 0, 0)) -> list[Packet]:
    """Split ``data`` into ``m`` contiguous chunks whose sizes differ by at most one.

    Earlier chunks absorb the remainder; when ``len(data) < m`` the trailing
    chunks are empty.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    base, extra = divmod(len(data), m)
    packets = []
    pos = 0
    for k in range(m):
        size = base + (1 if k < extra else 0)
        packets.append(Packet(key, k, m, Kind.DATA, bytes(data[pos:pos + size])))
        pos += size
    return packets


def fragment_message(msg: AppMessage, receiver: int, m: int, pad_to: int = 0) -> list[Packet]:
    data = msg.to_bytes()
    if len(data) < pad_to:
        data += bytes(pad_to - len(data))
    return fragment(data, m, MsgKey(msg.sender, receiver, msg.iteration))


def _reassemble(packets: Iterable[Packet]) -> tuple[MsgKey, bytes]:
    packets = sorted(packets, key=lambda p: p.seq)
    if not packets:
        raise IncompleteMessage([0])
    key, total = packets[0].key, packets[0].total
    for p in packets:
        if p.key != key or p.total != total:
            raise TransportError(f"mixed messages: {key} and {p.key}")
        if p.kind is not Kind.DATA:
            raise TransportError("ACK packet passed to assemble")
    seqs = [p.seq for p in packets]
    if len(set(seqs)) != len(seqs):
        raise TransportError("duplicate packets passed to assemble")
    missing = sorted(set(range(total)) - set(seqs))
    if missing:
        raise IncompleteMessage(missing)
    return key, b"".join(p.chunk for p in packets)


def assemble(packets: Iterable[Packet]) -> AppMessage:
    """Rebuild the application message from a complete set of packets, in any order."""
    key, data = _reassemble(packets)
    try:
        msg = AppMessage.from_bytes(data)
    except (ValueError, struct.error) as exc:
        raise TransportError(f"cannot decode message {key}: {exc}") from None
    if msg.sender != key.sender or msg.iteration != key.iteration:
        raise TransportError(f"packet key {key} disagrees with message header")
    return msg


@dataclass
class GbnSender:
    """Go-Back-N sender for one message.

    ``base`` is the oldest unacknowledged seq, ``next_seq`` the next one never
    sent. ``retries_used`` counts timeouts since ``base`` last advanced, so
    the budget applies per packet rather than per message.
    ``max_retries=None`` retries forever.
    """

    packets: list[Packet]
    window: int
    max_retries: int | None = 16
    base: int = 0
    next_seq: int = 0
    retries_used: int = 0
    retransmissions: int = 0
    failed: bool = False

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be at least 1")

    @property
    def total(self) -> int:
        return len(self.packets)

    @property
    def done(self) -> bool:
        return self.base >= self.total

    @property
    def buffer(self) -> list[Packet]:
        return self.packets[self.base:self.next_seq]

    def send_window(self) -> list[Packet]:
        if self.failed:
            return []
        limit = min(self.total, self.base + self.window)
        out = self.packets[self.next_seq:limit]
        self.next_seq = max(self.next_seq, limit)
        return out

    def on_ack(self, k: int) -> list[Packet]:
        """Cumulative ACK: everything up to and including ``k`` arrived."""
        if k + 1 > self.base and k < self.next_seq:
            self.base = k + 1
            self.retries_used = 0
        return []

    def on_timeout(self) -> list[Packet]:
        if self.failed or self.done or self.base >= self.next_seq:
            return []
        self.retries_used += 1
        if self.max_retries is not None and self.retries_used > self.max_retries:
            self.failed = True
            return []
        out = self.packets[self.base:self.next_seq]
        self.retransmissions += len(out)
        return out


@dataclass
class GbnReceiver:
    total: int
    expected_seq: int = 0
    chunks: list[Packet] = field(default_factory=list)
    message: AppMessage | None = None

    @property
    def complete(self) -> bool:
        return self.expected_seq == self.total

    @property
    def buffered_bytes(self) -> int:
        return sum(len(p.chunk) for p in self.chunks)


def gbn_step(sender: GbnSender, event: str, ack: int | None = None) -> list[Packet]:
    """Drive a sender with ``"send"``, ``"ack"`` (needs ``ack``) or ``"timeout"``."""
    if event == "send":
        return sender.send_window()
    if event == "ack":
        if ack is None:
            raise ValueError("ack event needs an ack number")
        return sender.on_ack(ack)
    if event == "timeout":
        return sender.on_timeout()
    raise ValueError(f"unknown event {event!r}")


def gbn_receive(receiver: GbnReceiver, p: Packet) -> tuple[Packet, AppMessage | None]:
    """Accept ``p`` if it is the next expected packet; always answer with a cumulative ACK.

    The completed message is returned exactly once, with the packet that
    completes it.
    """
    if p.kind is not Kind.DATA:
        raise TransportError("receiver got a non-DATA packet")
    completed = None
    if p.seq == receiver.expected_seq and not receiver.complete:
        receiver.chunks.append(p)
        receiver.expected_seq += 1
        if receiver.complete:
            receiver.message = assemble(receiver.chunks)
            completed = receiver.message
    ack_no = receiver.expected_seq - 1
    ack = Packet(p.key, p.seq, p.total, Kind.ACK, ack=ack_no)
    return ack, completed
