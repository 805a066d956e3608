"""Per-node state machine of the distributed pruning protocol.

Each node learns its view of the graph one hop per iteration by exchanging the
ids it discovered in the previous iteration. Nodes that cannot be the most
central one (leaves, triangle members, neighbours that only echo known ids)
are pruned: other nodes stop sending to them, and a node that prunes itself
stops participating and reports a closeness of zero.

Two variants share this machine. ``ORIGINAL`` lets every node announce its
neighbours in the first round. ``ENHANCED`` keeps leaves silent; a neighbour
that hears nothing in the first round infers the sender is a leaf and
synthesizes what it would have received, so non-leaf nodes follow exactly the
same trajectory in both variants.

The driving loop lives in :mod:`mpprune.simnet`; the state here never touches
the network.
"""
from __future__ import annotations

import enum
import struct
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

__all__ = [
    "Variant",
    "Status",
    "AppMessage",
    "NodeState",
    "ProtocolError",
    "init_state",
]


class Variant(enum.Enum):
    ORIGINAL = "original"
    ENHANCED = "enhanced"

    @classmethod
    def parse(cls, value: "str | Variant") -> "Variant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown variant {value!r}; expected 'original' or 'enhanced'") from None


class Status(enum.Enum):
    RUNNING = "running"
    ENDED = "ended"


class ProtocolError(RuntimeError):
    """Operation called out of order or with messages from the wrong iteration."""


_HEADER = struct.Struct(">IHI")


@dataclass(frozen=True)
class AppMessage:
    """Neighbouring message: the ids ``sender`` discovered in its last iteration."""

    sender: int
    iteration: int
    payload: frozenset[int]

    def __post_init__(self):
        if self.iteration < 0:
            raise ValueError("iteration must be non-negative")
        if not isinstance(self.payload, frozenset):
            object.__setattr__(self, "payload", frozenset(self.payload))

    def to_bytes(self) -> bytes:
        ids = sorted(self.payload)
        return _HEADER.pack(self.sender, self.iteration, len(ids)) + struct.pack(f">{len(ids)}I", *ids)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AppMessage":
        """Decode; trailing padding after the id list is ignored."""
        if len(data) < _HEADER.size:
            raise ValueError(f"message too short ({len(data)} bytes)")
        sender, iteration, count = _HEADER.unpack_from(data)
        end = _HEADER.size + 4 * count
        if len(data) < end:
            raise ValueError(f"message announces {count} ids but holds {(len(data) - _HEADER.size) // 4}")
        ids = struct.unpack_from(f">{count}I", data, _HEADER.size)
        if len(set(ids)) != count:
            raise ValueError("duplicate ids in payload")
        return cls(sender, iteration, frozenset(ids))


Outgoing = list[tuple[int, AppMessage]]


@dataclass
class NodeState:
    node_id: int
    D: int
    variant: Variant
    neighbors: frozenset[int]
    t: int = 0
    T: int | None = None
    active_neighbors: set[int] = field(default_factory=set)
    view: set[int] = field(default_factory=set)
    new_nodes: set[int] = field(default_factory=set)
    q_map: dict[int, frozenset[int]] = field(default_factory=dict)
    pruned_now: set[int] = field(default_factory=set)
    pruned_all: set[int] = field(default_factory=set)
    delta: int = 0
    inbox: deque = field(default_factory=deque)
    estimate: Fraction | None = None
    status: Status = Status.RUNNING
    # iteration at which each id first entered the view
    discovered_at: dict[int, int] = field(default_factory=dict)
    announced: dict[int, frozenset[int]] = field(default_factory=dict)
    # a node its neighbours have all gone silent on counts itself as pruned
    prune_when_starved: bool = True
    _opened: bool = False

    # -- round 0 ---------------------------------------------------------

    def initial_one_hop(self) -> Outgoing:
        if self._opened or self.t != 0:
            raise ProtocolError(f"node {self.node_id}: initial_one_hop already called")
        self._opened = True
        if self.status is not Status.RUNNING:
            return []
        if self.variant is Variant.ENHANCED and len(self.neighbors) == 1:
            # a silent leaf: neighbours infer it from the missing message
            self.pruned_now = {self.node_id}
            self.pruned_all = {self.node_id}
            self.T = 0
            self.estimate = Fraction(0)
            self.status = Status.ENDED
            return []
        msg = AppMessage(self.node_id, 0, frozenset(self.neighbors))
        return [(j, msg) for j in sorted(self.neighbors)]

    def initial_update(self, delivered: Iterable[AppMessage]) -> None:
        if self.t != 0:
            raise ProtocolError(f"node {self.node_id}: initial_update at t={self.t}")
        if self.status is not Status.RUNNING:
            raise ProtocolError(f"node {self.node_id}: initial_update on an ended node")
        self.inbox.extend(delivered)
        self.t = 1
        fused: set[int] = set()
        heard: set[int] = set()
        while self.inbox:
            msg = self.inbox.popleft()
            if msg.iteration != 0:
                raise ProtocolError(
                    f"node {self.node_id}: message from {msg.sender} for iteration {msg.iteration}, expected 0")
            if msg.sender not in self.neighbors:
                raise ProtocolError(f"node {self.node_id}: message from non-neighbour {msg.sender}")
            if msg.sender in heard:
                raise ProtocolError(f"node {self.node_id}: two round-0 messages from {msg.sender}")
            heard.add(msg.sender)
            fused |= msg.payload
            self.q_map[msg.sender] = msg.payload
        if self.variant is Variant.ENHANCED:
            me = frozenset((self.node_id,))
            for j in self.neighbors - heard:
                self.q_map[j] = me
                fused |= me
        self.q_map[self.node_id] = frozenset(self.neighbors)
        self._absorb(fused)

    def _absorb(self, fused: set[int]) -> None:
        self.new_nodes = fused - self.view
        self.view |= self.new_nodes
        for v in self.new_nodes:
            self.discovered_at.setdefault(v, self.t)
        self.delta += self.t * len(self.new_nodes)

    def leaves_detection(self) -> None:
        self.pruned_now = set()
        for j in sorted(self.neighbors | {self.node_id}):
            q = self.q_map.get(j)
            if q is not None and len(q) == 1:
                self.pruned_now.add(j)

    def _adjacent(self, f: int, g: int) -> bool | None:
        """Whether f and g are adjacent, as far as round-0 knowledge tells."""
        me = self.node_id
        if f == me:
            return g in self.neighbors
        if g == me:
            return f in self.neighbors
        if g in self.q_map:
            return f in self.q_map[g]
        if f in self.q_map:
            return g in self.q_map[f]
        return None

    def triangle_detection(self) -> None:
        for j in sorted(self.active_neighbors | {self.node_id}):
            q = self.q_map.get(j)
            if q is None or len(q) != 2:
                continue
            f, g = sorted(q)
            if self._adjacent(f, g):
                self.pruned_now.add(j)

    def first_pruning_detection(self) -> None:
        if self.t != 1:
            raise ProtocolError(f"node {self.node_id}: first pruning at t={self.t}")
        self.leaves_detection()
        self.triangle_detection()
        self.pruned_all = set(self.pruned_now)

    # -- rounds >= 1 -----------------------------------------------------

    def is_ended(self) -> bool:
        return (self.status is Status.ENDED or self.t == self.D or not self.new_nodes
                or self.node_id in self.pruned_all)

    def next_one_hop(self) -> Outgoing:
        if self.status is not Status.RUNNING or self.is_ended():
            return []
        self.active_neighbors -= self.pruned_all
        msg = AppMessage(self.node_id, self.t, frozenset(self.new_nodes))
        return [(j, msg) for j in sorted(self.active_neighbors)]

    def next_update(self, delivered: Iterable[AppMessage]) -> None:
        if self.status is not Status.RUNNING:
            raise ProtocolError(f"node {self.node_id}: next_update on an ended node")
        if self.is_ended():
            self.T = min(self.t, self.D)
            self.estimate = self.closeness_estimate()
            self.status = Status.ENDED
            return
        self.inbox.extend(delivered)
        sent_at = self.t
        self.t += 1
        fused: set[int] = set()
        self.announced = {}
        while self.inbox:
            msg = self.inbox.popleft()
            if msg.iteration != sent_at:
                raise ProtocolError(
                    f"node {self.node_id}: message from {msg.sender} for iteration {msg.iteration}, "
                    f"expected {sent_at}")
            fused |= msg.payload
            self.announced[msg.sender] = msg.payload
        previous_view = set(self.view)
        self.new_nodes = fused - self.view
        self.view |= self.new_nodes
        for v in self.new_nodes:
            self.discovered_at.setdefault(v, self.t)
        self.further_pruning_detection(previous_view)
        self.pruned_all |= self.pruned_now
        self.delta += self.t * len(self.new_nodes)

    def further_pruning_detection(self, previous_view: set[int]) -> None:
        self.pruned_now = set()
        for j in sorted(self.active_neighbors):
            payload = self.announced.get(j)
            # a neighbour that announced nothing this round cannot be judged
            if payload is not None and payload <= previous_view:
                self.pruned_now.add(j)
        if len(self.active_neighbors) == 1 and self.new_nodes:
            self.pruned_now.add(self.node_id)
        if (self.prune_when_starved and not self.new_nodes
                and self.active_neighbors - self.announced.keys()):
            self.pruned_now.add(self.node_id)

    def closeness_estimate(self) -> Fraction:
        if self.node_id in self.pruned_all:
            return Fraction(0)
        return Fraction(len(self.view) - 1, self.delta)

    def finalize(self) -> None:
        """Close an ended node (the ``is_ended`` branch of ``next_update``)."""
        if self.status is Status.RUNNING:
            self.next_update(())

    @property
    def stored_ids(self) -> int:
        """Node ids held in memory: view, new ids, first-round sets, pruned sets."""
        return (len(self.view) + len(self.new_nodes) + sum(len(q) for q in self.q_map.values())
                + len(self.pruned_all) + len(self.active_neighbors) + len(self.neighbors))


def init_state(i: int, neighbors: Iterable[int], D: int, variant: Variant | str = Variant.ORIGINAL,
               prune_when_starved: bool = True) -> NodeState:
    """Constructor: the node knows only its immediate neighbours."""
    nbrs = frozenset(neighbors)
    if D < 1:
        raise ValueError("D must be at least 1")
    if not nbrs:
        raise ValueError(f"node {i} has no neighbours; the graph must be connected")
    if i in nbrs:
        raise ValueError(f"node {i} lists itself as a neighbour")
    s = NodeState(node_id=i, D=D, variant=Variant.parse(variant), neighbors=nbrs,
                  prune_when_starved=prune_when_starved)
    s.active_neighbors = set(nbrs)
    s.view = set(nbrs)
    s.new_nodes = set(nbrs)
    s.delta = len(nbrs)
    s.discovered_at = {j: 0 for j in nbrs}
    return s
