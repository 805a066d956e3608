"""Round-based simulation of the pruning protocol over lossy FIFO links.

Rounds are separated by barriers: every node sends, the transport moves all
packets of the round to completion (or gives up on them), then every node
updates. Inside a round time advances in integer ticks:

* a directed link carries one packet at a time; a packet of ``s`` wire bytes
  occupies it for ``ceil(s / bandwidth)`` ticks (one tick when ``bandwidth``
  is ``None``) and arrives ``latency_ticks`` after its last tick;
* ACKs travel on a separate control path and take ``latency_ticks``;
* each sender runs a Go-Back-N timer on its oldest unacknowledged packet,
  ``timeout_ticks`` after that packet finished transmitting.

Loss is drawn per transmitted DATA packet from a stream seeded by
``(seed, sender, receiver)``, so two runs on the same seed see the same
channel on every link they both use.
"""
from __future__ import annotations

import heapq
import json
import math
import random
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from fractions import Fraction

from .graph import Graph
from .protocol import AppMessage, NodeState, Status, Variant, init_state
from .transport import ACK_BYTES, DATA_HEADER_BYTES, GbnReceiver, GbnSender, Kind, Packet, fragment_message, gbn_receive

__all__ = [
    "SimConfig",
    "RunMetrics",
    "SimulationFault",
    "LossChannel",
    "Flow",
    "exchange_phase",
    "run_simulation",
    "select_most_central",
]


class SimulationFault(RuntimeError):
    """The event loop stalled while messages were still unresolved."""


@dataclass(frozen=True)
class SimConfig:
    m: int = 1
    D: int = 12
    variant: Variant = Variant.ORIGINAL
    loss_p: float = 0.0
    latency_ticks: int = 1
    window: int | None = None          # None: the whole message (m packets)
    timeout_ticks: int | None = None   # None: 4 * latency_ticks
    max_retries: int | None = 16       # None: retry forever
    seed: int = 0
    # "packet": loss_p per DATA packet; "byte": loss_p per wire byte
    loss_model: str = "packet"
    symmetric_loss: bool = False
    bandwidth: int | None = None       # wire bytes per tick per link
    payload_bytes: int = 0             # pad every message to at least this size
    fast_path: bool = True
    prune_when_starved: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.D < 1:
            raise ValueError("D must be at least 1")
        if not 0.0 <= self.loss_p < 1.0:
            raise ValueError("loss_p must lie in [0, 1)")
        if self.latency_ticks < 1:
            raise ValueError("latency_ticks must be at least 1")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be at least 1")
        if self.timeout_ticks is not None and self.timeout_ticks < 1:
            raise ValueError("timeout_ticks must be at least 1")
        if self.loss_model not in ("packet", "byte"):
            raise ValueError(f"unknown loss model {self.loss_model!r}")
        if self.bandwidth is not None and self.bandwidth < 1:
            raise ValueError("bandwidth must be positive")

    @property
    def W(self) -> int:
        return self.window if self.window is not None else self.m

    @property
    def timeout(self) -> int:
        return self.timeout_ticks if self.timeout_ticks is not None else 4 * self.latency_ticks

    def tx_ticks(self, wire_size: int) -> int:
        if self.bandwidth is None:
            return 1
        return max(1, math.ceil(wire_size / self.bandwidth))


@dataclass
class RunMetrics:
    n: int
    variant: str
    m: int
    D: int
    seed: int
    packets_sent: list[int]
    packets_received: list[int]
    acks_sent: list[int]
    retransmissions: list[int]
    app_messages_sent: list[int]
    app_messages_lost: list[int]
    active_iterations: list[int]
    view_size: list[int]
    q_size: list[int]
    buffer_peak: list[int]
    estimates: list[Fraction]
    final_iteration: list[int]
    rounds: int = 0
    ticks: int = 0
    wall_seconds: float = 0.0
    selected_leader: int = -1

    @property
    def avg_msgs(self) -> float:
        return sum(self.packets_received) / self.n

    @property
    def max_msgs(self) -> int:
        return max(self.packets_received)

    @property
    def avg_sent(self) -> float:
        return sum(self.packets_sent) / self.n

    @property
    def loss_fraction(self) -> float:
        sent = sum(self.app_messages_sent)
        return sum(self.app_messages_lost) / sent if sent else 0.0

    @property
    def mem_proxy(self) -> int:
        return max(self.buffer_peak)

    def estimate_floats(self) -> list[float]:
        return [float(e) for e in self.estimates]

    def to_dict(self, wall: bool = True) -> dict:
        d = asdict(self)
        d["estimates"] = [f"{e.numerator}/{e.denominator}" for e in self.estimates]
        d["estimates_float"] = self.estimate_floats()
        d.update(avg_msgs=self.avg_msgs, max_msgs=self.max_msgs, loss_fraction=self.loss_fraction,
                 mem_proxy=self.mem_proxy)
        if not wall:
            d.pop("wall_seconds")
        return d

    def to_json(self, wall: bool = True) -> str:
        return json.dumps(self.to_dict(wall), sort_keys=True)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

class LossChannel:
    """Per-link Bernoulli drop decisions, reproducible per (seed, link, ordinal)."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self._streams: dict[tuple[int, int], random.Random] = {}

    @property
    def lossless(self) -> bool:
        return self.cfg.loss_p == 0.0

    def drop_probability(self, wire_size: int) -> float:
        if self.cfg.loss_model == "byte":
            return 1.0 - (1.0 - self.cfg.loss_p) ** wire_size
        return self.cfg.loss_p

    def dropped(self, link: tuple[int, int], wire_size: int) -> bool:
        if self.lossless:
            return False
        rng = self._streams.get(link)
        if rng is None:
            rng = self._streams[link] = random.Random(f"{self.cfg.seed}/{link[0]}/{link[1]}")
        return rng.random() < self.drop_probability(wire_size)


# ---------------------------------------------------------------------------
# one exchange phase
# ---------------------------------------------------------------------------

@dataclass
class Flow:
    src: int
    dst: int
    message: AppMessage
    sender: GbnSender
    receiver: GbnReceiver
    delivered_tick: int | None = None
    failed_tick: int | None = None
    timer_gen: int = 0
    timer_armed: bool = False
    pending: set = field(default_factory=set)
    last_finish: dict = field(default_factory=dict)

    @property
    def resolved(self) -> bool:
        return self.delivered_tick is not None or self.failed_tick is not None


@dataclass
class PhaseStats:
    packets_sent: list[int]
    packets_received: list[int]
    acks_sent: list[int]
    retransmissions: list[int]

    @classmethod
    def zeros(cls, n: int) -> "PhaseStats":
        return cls([0] * n, [0] * n, [0] * n, [0] * n)


_TX_DONE, _ARRIVE, _ACK, _TIMEOUT = range(4)


def _make_flows(outgoing: list[tuple[int, int, AppMessage]], cfg: SimConfig) -> list[Flow]:
    flows = []
    for src, dst, msg in outgoing:
        packets = fragment_message(msg, dst, cfg.m, cfg.payload_bytes)
        flows.append(Flow(src, dst, msg, GbnSender(packets, cfg.W, cfg.max_retries), GbnReceiver(cfg.m)))
    return flows


def _fast_exchange(flows: list[Flow], cfg: SimConfig, stats: PhaseStats) -> int:
    """Closed form of a loss-free phase whose window covers the whole message."""
    link_clock: dict[tuple[int, int], int] = {}
    last = -1
    for f in flows:
        link = (f.src, f.dst)
        clock = link_clock.get(link, 0)
        for p in f.sender.send_window():
            clock += cfg.tx_ticks(p.wire_size)
        link_clock[link] = clock
        f.receiver.chunks = list(f.sender.packets)
        f.receiver.expected_seq = cfg.m
        f.sender.base = cfg.m
        f.receiver.message = f.message
        f.delivered_tick = clock - 1 + cfg.latency_ticks
        last = max(last, f.delivered_tick)
        stats.packets_sent[f.src] += cfg.m
        stats.packets_received[f.dst] += cfg.m
        stats.acks_sent[f.dst] += cfg.m
    return last + 1 if flows else 0


def _fast_path_applies(cfg: SimConfig, loss: LossChannel) -> bool:
    return (cfg.fast_path and loss.lossless and cfg.W >= cfg.m
            and cfg.timeout > 2 * cfg.latency_ticks)


def exchange_phase(outgoing: list[tuple[int, int, AppMessage]], cfg: SimConfig, loss: LossChannel,
                   stats: PhaseStats, drop_script: set | None = None) -> tuple[list[Flow], int]:
    """Move every message of one round to its receiver or declare it lost.

    ``outgoing`` holds ``(sender, receiver, message)`` triples. Returns the
    flows (with delivery/failure ticks) and the number of ticks the phase
    took. ``drop_script``, if given, is a set of ``(src, dst, seq, attempt)``
    tuples to drop instead of drawing from the loss channel.
    """
    flows = _make_flows(outgoing, cfg)
    if not flows:
        return flows, 0
    if drop_script is None and _fast_path_applies(cfg, loss):
        return flows, _fast_exchange(flows, cfg, stats)

    heap: list = []
    counter = 0
    L = cfg.latency_ticks
    queues: dict[tuple[int, int], deque] = {}
    busy: dict[tuple[int, int], bool] = {}
    attempts: dict[tuple[int, int, int, int], int] = {}

    def push(tick, kind, *payload):
        nonlocal counter
        heapq.heappush(heap, (tick, counter, kind, payload))
        counter += 1

    def start_next(link, now):
        q = queues[link]
        while q:
            f, p = q.popleft()
            if f.failed_tick is not None:
                continue
            stats.packets_sent[f.src] += 1
            if drop_script is not None:
                k = (f.src, f.dst, f.message.iteration, p.seq)
                attempts[k] = attempts.get(k, 0) + 1
                lost = (f.src, f.dst, p.seq, attempts[k]) in drop_script
            else:
                lost = loss.dropped(link, p.wire_size)
            busy[link] = True
            push(now + cfg.tx_ticks(p.wire_size) - 1, _TX_DONE, link, f, p, lost)
            return
        busy[link] = False

    def enqueue(f, packets, now):
        link = (f.src, f.dst)
        q = queues.setdefault(link, deque())
        for p in packets:
            q.append((f, p))
            f.pending.add(p.seq)
        if not busy.get(link, False):
            start_next(link, now)

    def arm(f, deadline):
        f.timer_gen += 1
        f.timer_armed = True
        push(deadline, _TIMEOUT, f, f.timer_gen)

    def rearm_for_base(f, now):
        f.timer_gen += 1
        f.timer_armed = False
        s = f.sender
        if s.done or s.base >= s.next_seq:
            return
        if s.base not in f.pending:
            arm(f, max(now, f.last_finish[s.base] + cfg.timeout))

    for f in flows:
        enqueue(f, f.sender.send_window(), 0)

    unresolved = len(flows)
    last_tick = 0
    while unresolved:
        if not heap:
            raise SimulationFault(f"transport stalled with {unresolved} unresolved messages")
        tick, _, kind, payload = heapq.heappop(heap)
        if kind == _TX_DONE:
            link, f, p, lost = payload
            f.pending.discard(p.seq)
            f.last_finish[p.seq] = tick
            if not lost:
                push(tick + L, _ARRIVE, f, p)
            if not f.timer_armed and p.seq == f.sender.base and not f.sender.done:
                arm(f, tick + cfg.timeout)
            start_next(link, tick + 1)
        elif kind == _ARRIVE:
            f, p = payload
            stats.packets_received[f.dst] += 1
            ack, done = gbn_receive(f.receiver, p)
            stats.acks_sent[f.dst] += 1
            if done is not None and not f.resolved:
                f.delivered_tick = tick
                unresolved -= 1
                last_tick = max(last_tick, tick)
            if not (cfg.symmetric_loss and loss.dropped((f.dst, f.src), ack.wire_size)):
                push(tick + L, _ACK, f, ack)
        elif kind == _ACK:
            f, ack = payload
            if f.failed_tick is not None:
                continue
            before = f.sender.base
            f.sender.on_ack(ack.ack)
            if f.sender.base != before:
                rearm_for_base(f, tick)
            more = f.sender.send_window()
            if more:
                enqueue(f, more, tick)
        else:  # timeout
            f, gen = payload
            if gen != f.timer_gen or f.failed_tick is not None or f.sender.done:
                continue
            f.timer_armed = False
            link = (f.src, f.dst)
            resend = f.sender.on_timeout()
            q = queues[link]
            queues[link] = deque(item for item in q if item[0] is not f)
            f.pending.clear()
            if f.sender.failed:
                if f.delivered_tick is None:
                    f.failed_tick = tick
                    unresolved -= 1
                    last_tick = max(last_tick, tick)
                continue
            stats.retransmissions[f.src] += len(resend)
            enqueue(f, resend, tick)
    return flows, last_tick + 1


# ---------------------------------------------------------------------------
# whole run
# ---------------------------------------------------------------------------

def _estimate_key(est: Fraction, i: int):
    return (est, -i)


def select_most_central(metrics: "RunMetrics | list[Fraction]") -> int:
    """Node with the largest estimate; ties go to the smallest id."""
    estimates = metrics.estimates if isinstance(metrics, RunMetrics) else list(metrics)
    return max(range(len(estimates)), key=lambda i: _estimate_key(estimates[i], i))


def run_simulation(g: Graph, cfg: SimConfig, trace: list | None = None) -> RunMetrics:
    """Run the protocol on every node of ``g`` until all of them have ended.

    When ``trace`` is a list, a snapshot of every node state is appended to it
    after each round (used by tests).
    """
    wall0 = time.perf_counter()
    n = g.n
    states: list[NodeState] = [init_state(i, g.neighbors(i), cfg.D, cfg.variant, cfg.prune_when_starved)
                               for i in range(n)]
    loss = LossChannel(cfg)
    stats = PhaseStats.zeros(n)
    app_sent = [0] * n
    app_lost = [0] * n
    active_iters = [0] * n
    buffer_peak = [s.stored_ids for s in states]
    ticks = 0
    rounds = 0

    def exchange(outgoing):
        nonlocal ticks
        flows, phase_ticks = exchange_phase(outgoing, cfg, loss, stats)
        ticks += phase_ticks
        inbox: list[list[AppMessage]] = [[] for _ in range(n)]
        held = [0] * n
        for f in flows:
            app_sent[f.src] += 1
            wire = sum(p.wire_size for p in f.sender.packets)
            held[f.src] += wire
            held[f.dst] += wire - DATA_HEADER_BYTES * len(f.sender.packets)
            if f.delivered_tick is None:
                app_lost[f.src] += 1
            else:
                inbox[f.dst].append(f.receiver.message)
        for box in inbox:
            box.sort(key=lambda msg: (msg.sender, msg.iteration))
        return inbox, held

    def record(held):
        for i, s in enumerate(states):
            buffer_peak[i] = max(buffer_peak[i], s.stored_ids + held[i])
        if trace is not None:
            trace.append([_snapshot(s) for s in states])

    # round 0
    outgoing = []
    for s in states:
        was_running = s.status is Status.RUNNING
        out = s.initial_one_hop()
        if was_running and s.status is Status.RUNNING:
            active_iters[s.node_id] += 1
        outgoing.extend((s.node_id, j, msg) for j, msg in out)
    inbox, held = exchange(outgoing)
    for s in states:
        if s.status is Status.RUNNING:
            s.initial_update(inbox[s.node_id])
            s.first_pruning_detection()
    rounds = 1
    record(held)

    while any(s.status is Status.RUNNING for s in states):
        outgoing = []
        participants = []
        for s in states:
            if s.status is not Status.RUNNING:
                continue
            if s.is_ended():
                s.finalize()
                continue
            participants.append(s)
            active_iters[s.node_id] += 1
            outgoing.extend((s.node_id, j, msg) for j, msg in s.next_one_hop())
        if not participants:
            break
        inbox, held = exchange(outgoing)
        for s in participants:
            s.next_update(inbox[s.node_id])
        rounds += 1
        record(held)
        if rounds > cfg.D + 2:
            raise SimulationFault("protocol exceeded its iteration cap")

    estimates = [s.estimate if s.estimate is not None else Fraction(0) for s in states]
    metrics = RunMetrics(
        n=n, variant=cfg.variant.value, m=cfg.m, D=cfg.D, seed=cfg.seed,
        packets_sent=stats.packets_sent, packets_received=stats.packets_received,
        acks_sent=stats.acks_sent, retransmissions=stats.retransmissions,
        app_messages_sent=app_sent, app_messages_lost=app_lost,
        active_iterations=active_iters,
        view_size=[len(s.view) for s in states],
        q_size=[sum(len(q) for q in s.q_map.values()) for s in states],
        buffer_peak=buffer_peak,
        estimates=estimates,
        final_iteration=[s.T if s.T is not None else s.t for s in states],
        rounds=rounds, ticks=ticks,
    )
    metrics.selected_leader = select_most_central(metrics)
    metrics.wall_seconds = time.perf_counter() - wall0
    return metrics


def _snapshot(s: NodeState) -> dict:
    return {
        "t": s.t, "T": s.T, "status": s.status.value,
        "active": frozenset(s.active_neighbors), "view": frozenset(s.view),
        "new": frozenset(s.new_nodes), "q": dict(s.q_map),
        "pruned_now": frozenset(s.pruned_now), "pruned_all": frozenset(s.pruned_all),
        "delta": s.delta, "estimate": s.estimate,
    }
