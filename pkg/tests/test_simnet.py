from __future__ import annotations

from dataclasses import replace
from fractions import Fraction

import pytest

from helpers import complete_graph, path_graph, random_connected, star_graph
from mpprune.graph import exact_leader
from mpprune.protocol import AppMessage
from mpprune.simnet import (LossChannel, PhaseStats, SimConfig, exchange_phase, run_simulation,
                            select_most_central)

MSG = AppMessage(0, 0, frozenset({1, 2, 3}))


def one_flow(cfg: SimConfig, drop_script=None, outgoing=None):
    stats = PhaseStats.zeros(2)
    flows, ticks = exchange_phase(outgoing or [(0, 1, MSG)], cfg, LossChannel(cfg), stats, drop_script)
    return flows, ticks, stats


# -- exchange timing ---------------------------------------------------------

@pytest.mark.parametrize("m", [1, 4, 10])
@pytest.mark.parametrize("fast", [True, False])
def test_lossless_single_message_takes_m_plus_one_ticks(m, fast):
    flows, ticks, stats = one_flow(SimConfig(m=m, fast_path=fast))
    assert ticks == m + 1
    assert flows[0].delivered_tick == m
    assert stats.packets_sent[0] == m and stats.acks_sent[1] == m
    assert flows[0].receiver.message == MSG


@pytest.mark.parametrize("seq", [1, 3])
def test_scripted_drop_delays_delivery_by_timeout(seq):
    cfg = SimConfig(m=4, fast_path=False)
    base, _, _ = one_flow(cfg)
    flows, _, stats = one_flow(cfg, drop_script={(0, 1, seq, 1)})
    assert flows[0].delivered_tick - base[0].delivered_tick == cfg.timeout
    assert stats.retransmissions[0] == 4 - seq


def test_opposite_directions_share_no_queue():
    cfg = SimConfig(m=3, fast_path=False)
    back = AppMessage(1, 0, frozenset({0}))
    flows, ticks, stats = one_flow(cfg, outgoing=[(0, 1, MSG), (1, 0, back)])
    assert [f.receiver.message for f in flows] == [MSG, back]
    assert flows[0].delivered_tick == flows[1].delivered_tick == 3
    assert stats.packets_received == [3, 3]


def test_bandwidth_serializes_packets():
    cfg = SimConfig(m=2, bandwidth=10, payload_bytes=44)
    # each packet carries 22 payload bytes plus a 19-byte header: 5 ticks
    flows, ticks, _ = one_flow(cfg)
    assert flows[0].delivered_tick == 2 * 5 - 1 + 1
    slow, _, _ = one_flow(replace(cfg, fast_path=False))
    assert slow[0].delivered_tick == flows[0].delivered_tick


def test_retry_exhaustion_marks_message_lost():
    cfg = SimConfig(m=2, max_retries=1, fast_path=False)
    flows, _, _ = one_flow(cfg, drop_script={(0, 1, 0, 1), (0, 1, 0, 2)})
    assert flows[0].delivered_tick is None and flows[0].failed_tick is not None


def test_loss_channel_reproducible_per_link():
    cfg = SimConfig(loss_p=0.5, seed=4)
    a, b = LossChannel(cfg), LossChannel(cfg)
    seq_a = [a.dropped((0, 1), 30) for _ in range(50)]
    [b.dropped((5, 6), 30) for _ in range(17)]  # other links do not disturb the stream
    assert seq_a == [b.dropped((0, 1), 30) for _ in range(50)]


def test_byte_loss_model_probability():
    ch = LossChannel(SimConfig(loss_p=0.01, loss_model="byte"))
    assert ch.drop_probability(100) == pytest.approx(1 - 0.99 ** 100)
    assert LossChannel(SimConfig(loss_p=0.01)).drop_probability(100) == 0.01


@pytest.mark.parametrize("bad", [dict(m=0), dict(D=0), dict(loss_p=1.0), dict(latency_ticks=0),
                                 dict(window=0), dict(loss_model="burst"), dict(bandwidth=0)])
def test_invalid_config(bad):
    with pytest.raises(ValueError):
        SimConfig(**bad)


# -- whole runs --------------------------------------------------------------

def test_p3_run(p3):
    for variant in ("original", "enhanced"):
        met = run_simulation(p3, SimConfig(variant=variant))
        assert met.estimates[0] == met.estimates[2] == 0
        assert met.estimates[1] > 0
        assert met.selected_leader == 1


def test_select_most_central_tie_break():
    met = run_simulation(complete_graph(3), SimConfig())
    assert met.estimates == [0, 0, 0]
    assert select_most_central(met) == 0
    assert select_most_central([Fraction(1, 2), Fraction(3, 4), Fraction(3, 4)]) == 1


@pytest.mark.parametrize("D", [4, 6, 12])
def test_p5_leader_matches_oracle(D):
    g = path_graph(5)
    assert run_simulation(g, SimConfig(D=D)).selected_leader == exact_leader(g) == 2


def test_determinism():
    g = random_connected(40, 0.06, 2)
    cfg = SimConfig(m=10, loss_p=0.1, seed=9)
    assert run_simulation(g, cfg).to_json(wall=False) == run_simulation(g, cfg).to_json(wall=False)


@pytest.mark.parametrize("m", [1, 10])
def test_fast_path_equals_event_loop(m):
    g = random_connected(30, 0.08, 5)
    a = run_simulation(g, SimConfig(m=m))
    b = run_simulation(g, SimConfig(m=m, fast_path=False))
    assert a.to_dict(wall=False) == b.to_dict(wall=False)


@pytest.mark.parametrize("m", [1, 10])
def test_lossless_accounting(m):
    g = random_connected(35, 0.05, 7)
    met = run_simulation(g, SimConfig(m=m, D=12))
    for i in range(g.n):
        assert met.packets_sent[i] == m * met.app_messages_sent[i]
        assert met.packets_sent[i] <= m * g.degree(i) * 12
    assert met.loss_fraction == 0 and sum(met.retransmissions) == 0
    assert met.avg_msgs <= met.max_msgs


def test_enhanced_never_sends_more():
    for seed in range(5):
        g = random_connected(40, 0.03, seed)
        a = run_simulation(g, SimConfig(m=10))
        b = run_simulation(g, SimConfig(m=10, variant="enhanced"))
        for i in range(g.n):
            assert b.packets_sent[i] <= a.packets_sent[i]
            if g.degree(i) == 1:
                assert b.packets_sent[i] == 0 and a.packets_sent[i] >= 10


@pytest.mark.parametrize("symmetric", [False, True])
def test_unbounded_retries_lose_nothing(symmetric):
    g = random_connected(25, 0.1, 1)
    met = run_simulation(g, SimConfig(m=10, loss_p=0.3, max_retries=None, seed=3, symmetric_loss=symmetric))
    assert sum(met.app_messages_lost) == 0 and met.loss_fraction == 0
    assert sum(met.retransmissions) > 0
    clean = run_simulation(g, SimConfig(m=10))
    assert met.estimates == clean.estimates


def test_bounded_retries_can_lose_messages():
    g = random_connected(25, 0.1, 1)
    met = run_simulation(g, SimConfig(m=1, loss_p=0.6, max_retries=0, seed=3))
    assert 0 < met.loss_fraction <= 1


def test_memory_proxy_grows_with_packet_headers():
    g = random_connected(30, 0.08, 4)
    small = run_simulation(g, SimConfig(m=1)).mem_proxy
    big = run_simulation(g, SimConfig(m=50)).mem_proxy
    assert big > small


def test_json_detail_has_per_node_vectors():
    met = run_simulation(star_graph(3), SimConfig())
    d = met.to_dict()
    assert d["estimates"][0] == "3/4" and len(d["packets_sent"]) == 4
    assert "wall_seconds" not in met.to_dict(wall=False)
