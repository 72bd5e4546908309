"""
Network layer: the messages carried across hops, static routing tables and a reactive AODV with
destination-only replies and hard route expiry.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

from mac import BROADCAST
from sim_core import EventKind, Simulator

logger = logging.getLogger(__name__)

RREQ_BITS = 192
RREP_BITS = 160


class MessageKind(enum.Enum):
    DATA = "data"
    DETECT = "detect"
    AUTH_REQ = "auth-req"
    AUTH_RESP = "auth-resp"
    AUTH_NOTIFY = "auth-notify"
    RREQ = "rreq"
    RREP = "rrep"

    @property
    def control(self) -> bool:
        return self in (MessageKind.RREQ, MessageKind.RREP)


@dataclass(eq=False)
class Message:
    """
    End-to-end network message. ``hops`` lists every node that held the message, origin first.
    """

    msg_id: int
    kind: MessageKind
    origin: int
    target: int
    created_at: float
    bits: int
    flow: str | None = None
    app_seq: int | None = None
    body: Any = None
    hops: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class Rreq:
    originator: int
    rreq_id: int
    destination: int
    orig_seq: int
    dest_seq: int
    hop_count: int = 0


@dataclass(frozen=True)
class Rrep:
    originator: int
    destination: int
    dest_seq: int
    hop_count: int = 0


@dataclass
class RouteEntry:
    destination: int
    next_hop: int
    hop_count: int
    established_at: float
    lifetime: float
    dest_seq_no: int = 0

    def valid(self, now: float) -> bool:
        return now - self.established_at < self.lifetime


class HandleResult(enum.Enum):
    IGNORED = "ignored"
    FORWARDED = "forwarded"
    REPLIED = "replied"
    INSTALLED = "installed"
    DROPPED = "dropped"


Send = Callable[[int, Message], None]


# Static ------------------------------------------------------------------------------------------


def static_next_hop(table: dict[int, int], destination: int, node_id: int) -> int | None:
    """Exact-match lookup; a node routes to itself locally and None means no route."""
    if destination == node_id:
        return node_id
    return table.get(destination)


class StaticRouting:
    def __init__(self, node_id: int, sim: Simulator, send: Send, table: dict[int, int] | None = None):
        self.node_id = node_id
        self.sim = sim
        self.send = send
        self.table = dict(table or {})

    def forward(self, msg: Message) -> bool:
        hop = static_next_hop(self.table, msg.target, self.node_id)
        if hop is None:
            self.sim.metrics.counters["no-route-drops"] += 1
            logger.debug("node %d: no static route to %d", self.node_id, msg.target)
            return False
        self.send(hop, msg)
        return True

    def on_control(self, msg: Message, from_node: int) -> HandleResult:
        return HandleResult.IGNORED

    def on_timer(self, payload) -> None:
        pass


# AODV --------------------------------------------------------------------------------------------


@dataclass(frozen=True)
class AodvConfig:
    active_route_timeout: float = 10.0
    node_traversal_time: float = 0.01
    net_diameter: int = 10
    rreq_retries: int = 2
    buffer_limit: int = 16
    jitter: float = 0.01

    def __post_init__(self):
        if self.active_route_timeout <= 0:
            raise ValueError("routing.lifetime must be positive")
        if self.rreq_retries < 0 or self.buffer_limit < 1:
            raise ValueError("routing.rreq_retries must be >= 0 and routing.buffer_limit >= 1")
        if self.jitter < 0:
            raise ValueError("routing.jitter must be >= 0")

    @property
    def net_traversal_time(self) -> float:
        return 2.0 * self.node_traversal_time * self.net_diameter

    @property
    def rreq_wait(self) -> float:
        return 2.0 * self.net_traversal_time


@dataclass(frozen=True)
class RreqRetry:
    destination: int
    token: int


@dataclass(frozen=True)
class Rebroadcast:
    message: Message


@dataclass
class Discovery:
    retries_left: int
    token: int


class AodvRouting:
    """
    Reactive routing of one node.

    Routes age out ``active_route_timeout`` after they were installed, whether used or not. Only the
    destination answers a route request. Nodes with ``relay`` False (intruders) neither forward nor
    answer requests.
    """

    def __init__(
        self,
        node_id: int,
        sim: Simulator,
        send: Send,
        config: AodvConfig | None = None,
        relay: bool = True,
        failed: Callable[[Message, str], None] | None = None,
    ):
        self.node_id = node_id
        self.sim = sim
        self.send = send
        self.config = config or AodvConfig()
        self.relay = relay
        self.failed = failed
        self.table: dict[int, RouteEntry] = {}
        self.seen: dict[int, int] = {}  # originator -> highest RREQ id handled
        self.buffers: dict[int, deque[Message]] = {}
        self.discoveries: dict[int, Discovery] = {}
        self.seq_no = 0
        self._rreq_id = 0
        self._token = 0
        self.stream = sim.rng(node_id, "routing")

    @property
    def metrics(self):
        return self.sim.metrics

    def valid_route(self, destination: int) -> RouteEntry | None:
        entry = self.table.get(destination)
        if entry is not None and entry.valid(self.sim.now):
            return entry
        return None

    def install(self, destination: int, next_hop: int, hop_count: int, dest_seq: int) -> bool:
        """Install or replace a route under the freshness rule; returns whether the table changed."""
        current = self.valid_route(destination)
        if current is not None and not (
            dest_seq > current.dest_seq_no
            or (dest_seq == current.dest_seq_no and hop_count < current.hop_count)
        ):
            return False
        self.table[destination] = RouteEntry(
            destination, next_hop, hop_count, self.sim.now, self.config.active_route_timeout, dest_seq
        )
        return True

    # data path
    def forward(self, msg: Message) -> bool:
        if msg.target == self.node_id:
            return True
        entry = self.valid_route(msg.target)
        if entry is None:
            self.aodv_originate(msg.target, msg)
            return False
        self.send(entry.next_hop, msg)
        return True

    def aodv_originate(self, destination: int, msg: Message | None = None) -> None:
        """Buffer ``msg`` and start a discovery for ``destination`` unless one is running."""
        if msg is not None:
            buffer = self.buffers.setdefault(destination, deque())
            if len(buffer) >= self.config.buffer_limit:
                dropped = buffer.popleft()
                self.metrics.counters["buffer-drops"] += 1
                self._fail(dropped, "buffer-full")
            buffer.append(msg)
        if destination in self.discoveries:
            return
        self._token += 1
        self.discoveries[destination] = Discovery(self.config.rreq_retries, self._token)
        self._broadcast_rreq(destination)

    def _broadcast_rreq(self, destination: int) -> None:
        self._rreq_id += 1
        self.seq_no += 1
        known = self.table.get(destination)
        rreq = Rreq(
            originator=self.node_id,
            rreq_id=self._rreq_id,
            destination=destination,
            orig_seq=self.seq_no,
            dest_seq=known.dest_seq_no if known else 0,
        )
        self.seen[self.node_id] = self._rreq_id
        self.metrics.counters["rreq-sent"] += 1
        self.send(BROADCAST, self._control(MessageKind.RREQ, BROADCAST, RREQ_BITS, rreq))
        discovery = self.discoveries[destination]
        self.sim.post(
            self.sim.now + self.config.rreq_wait,
            EventKind.ROUTE_EXPIRY,
            self.node_id,
            RreqRetry(destination, discovery.token),
        )

    def _control(self, kind: MessageKind, target: int, bits: int, body) -> Message:
        return Message(
            msg_id=self.sim.next_message_id(),
            kind=kind,
            origin=self.node_id,
            target=target,
            created_at=self.sim.now,
            bits=bits,
            body=body,
            hops=[self.node_id],
        )

    def on_timer(self, payload) -> None:
        match payload:
            case RreqRetry(destination, token):
                discovery = self.discoveries.get(destination)
                if discovery is None or discovery.token != token:
                    return
                if self.valid_route(destination) is not None:
                    self._flush(destination)
                    return
                if discovery.retries_left > 0:
                    discovery.retries_left -= 1
                    self._broadcast_rreq(destination)
                    return
                del self.discoveries[destination]
                for msg in self.buffers.pop(destination, ()):
                    self.metrics.counters["no-route-drops"] += 1
                    self._fail(msg, "route-discovery-failed")
                logger.debug("node %d: discovery for %d failed", self.node_id, destination)
            case Rebroadcast(message):
                self.send(BROADCAST, message)

    # control path
    def on_control(self, msg: Message, from_node: int) -> HandleResult:
        match msg.kind:
            case MessageKind.RREQ:
                return self.aodv_handle_rreq(msg.body, from_node)
            case MessageKind.RREP:
                return self.aodv_handle_rrep(msg.body, from_node)
        return HandleResult.IGNORED

    def aodv_handle_rreq(self, rreq: Rreq, from_node: int) -> HandleResult:
        if not self.relay or rreq.rreq_id <= self.seen.get(rreq.originator, 0):
            return HandleResult.IGNORED
        self.seen[rreq.originator] = rreq.rreq_id
        self.install(rreq.originator, from_node, rreq.hop_count + 1, rreq.orig_seq)
        if rreq.destination == self.node_id:
            self.seq_no = max(self.seq_no, rreq.dest_seq) + 1
            rrep = Rrep(rreq.originator, self.node_id, self.seq_no)
            self.metrics.counters["rrep-sent"] += 1
            self.send(from_node, self._control(MessageKind.RREP, rreq.originator, RREP_BITS, rrep))
            return HandleResult.REPLIED
        relayed = Rreq(
            rreq.originator, rreq.rreq_id, rreq.destination, rreq.orig_seq, rreq.dest_seq, rreq.hop_count + 1
        )
        message = self._control(MessageKind.RREQ, BROADCAST, RREQ_BITS, relayed)
        delay = self.stream.uniform(0.0, self.config.jitter) if self.config.jitter > 0 else 0.0
        self.metrics.counters["rreq-forwarded"] += 1
        self.sim.post(self.sim.now + delay, EventKind.ROUTE_EXPIRY, self.node_id, Rebroadcast(message))
        return HandleResult.FORWARDED

    def aodv_handle_rrep(self, rrep: Rrep, from_node: int) -> HandleResult:
        if not self.relay and rrep.originator != self.node_id:
            return HandleResult.IGNORED
        self.install(rrep.destination, from_node, rrep.hop_count + 1, rrep.dest_seq)
        if rrep.originator == self.node_id:
            self._flush(rrep.destination)
            return HandleResult.INSTALLED
        reverse = self.valid_route(rrep.originator)
        if reverse is None:
            self.metrics.counters["rrep-drops"] += 1
            return HandleResult.DROPPED
        relayed = Rrep(rrep.originator, rrep.destination, rrep.dest_seq, rrep.hop_count + 1)
        self.send(reverse.next_hop, self._control(MessageKind.RREP, rrep.originator, RREP_BITS, relayed))
        return HandleResult.FORWARDED

    def _flush(self, destination: int) -> None:
        self.discoveries.pop(destination, None)
        entry = self.valid_route(destination)
        for msg in self.buffers.pop(destination, ()):
            self.send(entry.next_hop, msg)

    def _fail(self, msg: Message, reason: str) -> None:
        if self.failed is not None:
            self.failed(msg, reason)
