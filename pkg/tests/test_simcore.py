import io

import pytest

from twophase_tdma.rdtdma import RdTdmaConfig, run_phase1
from twophase_tdma.simcore import IND, REQ, ChannelConfig, Engine, Message, SimulationError
from twophase_tdma.topology import generate_random

# 0 - 1 - 2 - 3 : nodes 0 and 2 share neighbor 1
PATH = [{1}, {0, 2}, {1, 3}, {2}]


def _engine(per=0.0, collisions=True, drop=None):
    eng = Engine(PATH, ChannelConfig(per=per, collisions_enabled=collisions, seed=1, drop=drop))
    got = {i: [] for i in range(4)}
    for i in range(4):
        eng.attach(i, lambda m, i=i: got[i].append((eng.now, m.sender)))
    return eng, got


def test_lossless_reaches_all_neighbors():
    eng, got = _engine()
    eng.schedule(0, 1, lambda: eng.broadcast(Message(IND, 1, None)))
    eng.run()
    assert got[0] == [(1, 1)] and got[2] == [(1, 1)]
    assert got[3] == []


def test_per_one_loses_everything():
    eng, got = _engine(per=1.0)
    eng.schedule(0, 1, lambda: eng.broadcast(Message(IND, 1, None)))
    eng.run()
    assert not any(got.values())
    assert eng.losses == 2


def test_collision_at_shared_neighbor_only():
    eng, got = _engine()
    eng.schedule(3, 0, lambda: eng.broadcast(Message(REQ, 0, None)))
    eng.schedule(3, 2, lambda: eng.broadcast(Message(REQ, 2, None)))
    eng.run()
    assert got[1] == []
    assert got[3] == [(4, 2)]


def test_collisions_disabled_delivers_both():
    eng, got = _engine(collisions=False)
    eng.schedule(3, 0, lambda: eng.broadcast(Message(REQ, 0, None)))
    eng.schedule(3, 2, lambda: eng.broadcast(Message(REQ, 2, None)))
    eng.run()
    assert sorted(got[1]) == [(4, 0), (4, 2)]


def test_empty_queue_is_quiescent():
    eng, _ = _engine()
    assert eng.run() == []
    assert eng.now == 0


def test_single_event_at_five():
    eng, _ = _engine()
    eng.schedule(5, 1, lambda: eng.broadcast(Message(IND, 1, None)))
    trace = eng.run()
    assert len(trace) == 1
    assert trace[0].line() == "5 IND 1 0,2 -"


def test_past_event_rejected():
    eng, _ = _engine()
    eng.schedule(5, 0, lambda: None)
    eng.run()
    with pytest.raises(SimulationError):
        eng.schedule(2, 0, lambda: None)


def test_deliveries_before_timers_same_tick():
    eng, _ = _engine()
    order = []
    eng.attach(0, lambda m: order.append("rx"))
    eng.schedule(0, 1, lambda: eng.broadcast(Message(IND, 1, None)))
    eng.schedule(1, 0, lambda: order.append("timer"))
    eng.run()
    assert order == ["rx", "timer"]


def test_drop_hook_targets_one_receiver():
    eng, got = _engine(drop=lambda t, m, j: j == 2)
    eng.schedule(0, 1, lambda: eng.broadcast(Message(IND, 1, None)))
    trace = eng.run()
    assert got[0] and not got[2]
    assert trace[0].lost == (2,)


def test_run_until_stops_clock():
    eng, got = _engine()
    eng.schedule(10, 1, lambda: eng.broadcast(Message(IND, 1, None)))
    eng.run(until=4)
    assert eng.now == 4 and not got[0]
    eng.run()
    assert got[0]


def test_loss_rate_within_three_sigma():
    per, n = 0.3, 10_000
    eng = Engine([{1}, {0}], ChannelConfig(per=per, seed=7), record_trace=False)
    for t in range(n):
        eng.schedule(t, 0, lambda: eng.broadcast(Message(IND, 0, None)))
    eng.run()
    sigma = (per * (1 - per) / n) ** 0.5
    assert abs(eng.losses / n - per) < 3 * sigma


def test_invalid_per():
    with pytest.raises(ValueError):
        ChannelConfig(per=1.5)


def test_seeded_phase1_replays_identically():
    topo = generate_random(30, range=70.0, seed=2)

    def dump():
        res = run_phase1(topo, RdTdmaConfig(S=30, seed=2), ChannelConfig(per=0.1, seed=2), record_trace=True)
        buf = io.StringIO()
        res.engine.dump_trace(buf)
        return buf.getvalue()

    a, b = dump(), dump()
    assert a and a == b
