from functools import partial

import pytest

from mac import BROADCAST
from routing import (
    AodvConfig,
    AodvRouting,
    HandleResult,
    Message,
    MessageKind,
    Rreq,
    RouteEntry,
    StaticRouting,
    static_next_hop,
)
from sim_core import EventKind, Simulator

LINK_DELAY = 1e-3


class Mesh:
    """AODV agents joined by loss-free links with a fixed one-hop delay."""

    def __init__(self, links, config=None, non_relays=()):
        self.sim = Simulator(seed=3)
        nodes = sorted({n for link in links for n in link})
        self.neighbours = {n: set() for n in nodes}
        for a, b in links:
            self.neighbours[a].add(b)
            self.neighbours[b].add(a)
        self.agents = {
            n: AodvRouting(n, self.sim, partial(self.send, n), config or AodvConfig(), relay=n not in non_relays)
            for n in nodes
        }
        self.delivered = []
        self.sim.on(EventKind.ROUTE_EXPIRY, lambda event: self.agents[event.target_node].on_timer(event.payload))
        self.sim.on(EventKind.PHY_RX_END, self._receive)

    def send(self, src, next_hop, msg):
        receivers = self.neighbours[src] if next_hop == BROADCAST else {next_hop} & self.neighbours[src]
        for r in sorted(receivers):
            self.sim.post(self.sim.now + LINK_DELAY, EventKind.PHY_RX_END, r, (src, msg))

    def _receive(self, event):
        src, msg = event.payload
        node = event.target_node
        if msg.kind.control:
            self.agents[node].on_control(msg, src)
            return
        msg.hops.append(node)
        if msg.target == node:
            self.delivered.append(msg)
        else:
            self.agents[node].forward(msg)

    def data(self, origin, target):
        return Message(self.sim.next_message_id(), MessageKind.DATA, origin, target, self.sim.now, 512, hops=[origin])


def recorder():
    sent = []
    return sent, lambda hop, msg: sent.append((hop, msg))


# Static ------------------------------------------------------------------------------------------


def test_static_next_hop_lookup():
    table = {0: 1, 7: 3}
    assert static_next_hop(table, 0, 5) == 1
    assert static_next_hop(table, 5, 5) == 5
    assert static_next_hop(table, 4, 5) is None


def test_static_routing_forwards_or_drops():
    sim = Simulator()
    sent, send = recorder()
    routing = StaticRouting(5, sim, send, {0: 1})
    msg = Message(1, MessageKind.DATA, 5, 0, 0.0, 512)
    assert routing.forward(msg)
    assert sent == [(1, msg)]
    assert not routing.forward(Message(2, MessageKind.DATA, 5, 9, 0.0, 512))
    assert sim.metrics.counters["no-route-drops"] == 1
    assert routing.on_control(msg, 1) is HandleResult.IGNORED


# Route table -------------------------------------------------------------------------------------


def test_route_entry_hard_expiry():
    entry = RouteEntry(destination=0, next_hop=1, hop_count=2, established_at=1.0, lifetime=5.0)
    assert entry.valid(5.999)
    assert not entry.valid(6.0)


def test_install_freshness_rule():
    sim = Simulator()
    routing = AodvRouting(1, sim, lambda hop, msg: None)
    assert routing.install(0, 2, hop_count=3, dest_seq=5)
    # older sequence number never replaces
    assert not routing.install(0, 3, hop_count=1, dest_seq=4)
    # same sequence, longer path
    assert not routing.install(0, 3, hop_count=4, dest_seq=5)
    # same sequence, shorter path
    assert routing.install(0, 3, hop_count=2, dest_seq=5)
    assert routing.valid_route(0).next_hop == 3
    # fresher sequence, longer path
    assert routing.install(0, 4, hop_count=6, dest_seq=6)
    assert routing.valid_route(0).next_hop == 4


def test_routes_expire_whether_used_or_not():
    sim = Simulator()
    sim.on(EventKind.SIM_END, lambda event: None)
    routing = AodvRouting(1, sim, lambda hop, msg: None, AodvConfig(active_route_timeout=5.0))
    routing.install(0, 2, 1, 1)
    sim.run_until(4.0)
    routing.forward(Message(1, MessageKind.DATA, 1, 0, 4.0, 512))
    assert routing.valid_route(0) is not None
    sim.run_until(5.0)
    assert routing.valid_route(0) is None
    # an expired route is replaced by any newer information
    assert routing.install(0, 3, 9, 0)


def test_config_timings():
    config = AodvConfig()
    assert config.net_traversal_time == pytest.approx(0.2)
    assert config.rreq_wait == pytest.approx(0.4)
    with pytest.raises(ValueError):
        AodvConfig(active_route_timeout=0.0)


# Discovery ---------------------------------------------------------------------------------------


def test_discovery_on_a_line_delivers_buffered_data():
    mesh = Mesh([(0, 1), (1, 2), (2, 3)])
    msg = mesh.data(3, 0)
    mesh.agents[3].forward(msg)
    mesh.sim.run_until(1.0)
    assert mesh.delivered == [msg]
    assert msg.hops == [3, 2, 1, 0]
    route = mesh.agents[3].valid_route(0)
    assert route.next_hop == 2
    assert route.hop_count == 3
    # reverse routes towards the originator
    assert mesh.agents[0].valid_route(3).next_hop == 1


def test_only_the_destination_replies():
    mesh = Mesh([(0, 1), (1, 2), (2, 3), (1, 3)])
    mesh.agents[1].install(0, 0, 1, 1)
    mesh.agents[3].forward(mesh.data(3, 0))
    mesh.sim.run_until(1.0)
    counters = mesh.sim.metrics.counters
    assert counters["rrep-sent"] == 1
    assert counters["rreq-sent"] == 1


def test_each_node_relays_a_request_once():
    # two disjoint paths between 0 and 5
    mesh = Mesh([(0, 1), (1, 2), (2, 5), (0, 3), (3, 4), (4, 5), (1, 4)])
    mesh.agents[0].forward(mesh.data(0, 5))
    mesh.sim.run_until(1.0)
    # every node except the originator and the destination forwards at most once
    assert mesh.sim.metrics.counters["rreq-forwarded"] <= 4
    assert len(mesh.delivered) == 1
    hops = mesh.delivered[0].hops
    assert len(hops) == len(set(hops))


def test_unreachable_destination_retries_then_drops():
    mesh = Mesh([(0, 1), (1, 2)])
    failed = []
    mesh.agents[0].failed = lambda msg, reason: failed.append(reason)
    mesh.agents[0].forward(mesh.data(0, 9))
    mesh.sim.run_until(2.0)
    counters = mesh.sim.metrics.counters
    assert counters["rreq-sent"] == 3
    assert counters["no-route-drops"] == 1
    assert failed == ["route-discovery-failed"]
    assert not mesh.agents[0].discoveries


def test_buffer_drops_oldest_when_full():
    mesh = Mesh([(0, 1)])
    failed = []
    mesh.agents[0].failed = lambda msg, reason: failed.append((msg.msg_id, reason))
    messages = [mesh.data(0, 9) for _ in range(20)]
    for msg in messages:
        mesh.agents[0].forward(msg)
    assert mesh.sim.metrics.counters["buffer-drops"] == 4
    assert [m for m, _ in failed] == [m.msg_id for m in messages[:4]]
    assert len(mesh.agents[0].buffers[9]) == 16
    assert mesh.sim.metrics.counters["rreq-sent"] == 1


def test_non_relay_nodes_do_not_forward_requests():
    mesh = Mesh([(0, 1), (1, 2)], non_relays={1})
    mesh.agents[2].forward(mesh.data(2, 0))
    mesh.sim.run_until(2.0)
    assert mesh.delivered == []
    assert mesh.sim.metrics.counters["rreq-forwarded"] == 0


def test_duplicate_request_ignored():
    sim = Simulator()
    sim.on(EventKind.ROUTE_EXPIRY, lambda event: None)
    routing = AodvRouting(2, sim, lambda hop, msg: None)
    rreq = Rreq(originator=0, rreq_id=1, destination=5, orig_seq=1, dest_seq=0)
    assert routing.aodv_handle_rreq(rreq, 1) is HandleResult.FORWARDED
    assert routing.aodv_handle_rreq(rreq, 3) is HandleResult.IGNORED


def test_request_record_keeps_one_entry_per_originator():
    sim = Simulator()
    sim.on(EventKind.ROUTE_EXPIRY, lambda event: None)
    routing = AodvRouting(2, sim, lambda hop, msg: None)
    for rreq_id in range(1, 301):
        routing.aodv_handle_rreq(Rreq(10 + rreq_id % 3, rreq_id, 5, rreq_id, 0), 1)
    assert routing.seen == {10: 300, 11: 298, 12: 299}
    # an older flood copy arriving late is stale
    assert routing.aodv_handle_rreq(Rreq(11, 10, 5, 10, 0), 3) is HandleResult.IGNORED


def test_rebroadcast_jitter_is_bounded():
    sim = Simulator()
    times = []
    sim.on(EventKind.ROUTE_EXPIRY, lambda event: times.append(sim.now))
    routing = AodvRouting(2, sim, lambda hop, msg: None, AodvConfig(jitter=0.01))
    for rreq_id in range(1, 51):
        routing.aodv_handle_rreq(Rreq(0, rreq_id, 5, 1, 0), 1)
    sim.run_until(1.0)
    assert len(times) == 50
    assert all(0.0 <= t <= 0.01 for t in times)
