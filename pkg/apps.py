"""
Application layer: constant bit rate flows, and the intrusion application where a sensor that
detects an intruder notifies the base station and challenges the intruder for authentication.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from mac import BROADCAST
from routing import Message, MessageKind
from sensing import SensingEvent
from sim_core import EventKind, Role, Simulator

logger = logging.getLogger(__name__)

REPORT_BITS = 256
CBR_BITS = 512


class NodePort(Protocol):
    id: int
    sim: Simulator

    def route(self, msg: Message) -> None: ...

    def link_send(self, next_hop: int, msg: Message) -> None: ...


@dataclass(frozen=True)
class CbrFlow:
    name: str
    source: int
    destination: int
    rate: float  # packets/s
    payload_bits: int = CBR_BITS
    start: float = 0.0
    stop: float = math.inf

    def __post_init__(self):
        if not 0.1 <= self.rate <= 80.0:
            raise ValueError(f"flow.{self.name}: rate must lie in [0.1, 80] packets/s")
        if self.payload_bits <= 0:
            raise ValueError(f"flow.{self.name}: payload_bits must be positive")
        if self.source == self.destination:
            raise ValueError(f"flow.{self.name}: source and destination must differ")
        if self.stop <= self.start:
            raise ValueError(f"flow.{self.name}: stop must be after start")

    @property
    def interval(self) -> float:
        return 1.0 / self.rate


def cbr_emit(flow: CbrFlow, stream, t_end: float) -> np.ndarray:
    """Generation instants at exact 1/rate spacing after a phase drawn once in [0, 1/rate)."""
    phase = stream.uniform(0.0, flow.interval)
    first = flow.start + phase
    last = min(flow.stop, t_end)
    count = max(0, math.ceil((last - first) / flow.interval))
    times = first + np.arange(count) * flow.interval
    return times[times < last]


@dataclass(frozen=True)
class CbrTick:
    flow: CbrFlow
    seq: int


class CbrApp:
    def __init__(self, node: NodePort, flow: CbrFlow):
        self.node = node
        self.flow = flow

    def start(self, t_end: float) -> int:
        sim = self.node.sim
        times = cbr_emit(self.flow, sim.rng(self.node.id, "app-traffic"), t_end)
        for seq, t in enumerate(times, start=1):
            sim.post(float(t), EventKind.APP_GENERATE, self.node.id, CbrTick(self.flow, seq))
        return times.size

    def generate(self, tick: CbrTick) -> Message:
        sim = self.node.sim
        msg = Message(
            msg_id=sim.next_message_id(),
            kind=MessageKind.DATA,
            origin=self.node.id,
            target=self.flow.destination,
            created_at=sim.now,
            bits=self.flow.payload_bits,
            flow=self.flow.name,
            app_seq=tick.seq,
            hops=[self.node.id],
        )
        sim.metrics.record_sent(self.flow.name, tick.seq, msg.bits, sim.now)
        self.node.route(msg)
        return msg


# Intrusion application ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectReport:
    event_id: int
    beacon_id: int
    sensor: int
    intruder: int
    emitted_at: float


@dataclass(frozen=True)
class AuthRequest:
    request_id: int
    sensor: int
    intruder: int
    sent_at: float = 0.0


@dataclass
class AppConfig:
    base_station: int = 0
    hold_off: float = 1.0
    auth_timeout: float = 0.5
    report_bits: int = REPORT_BITS

    def __post_init__(self):
        if self.hold_off < 0 or self.auth_timeout <= 0 or self.report_bits <= 0:
            raise ValueError("app.hold_off must be >= 0, app.auth_timeout and app.report_bits > 0")


class SensorApp:
    """Detection reporting and authentication challenge of one sensor."""

    def __init__(self, node: NodePort, config: AppConfig):
        self.node = node
        self.config = config
        self.last_report: dict[int, float] = {}
        self.pending: dict[int, AuthRequest] = {}

    def _message(self, kind: MessageKind, target: int, body) -> Message:
        sim = self.node.sim
        return Message(
            msg_id=sim.next_message_id(),
            kind=kind,
            origin=self.node.id,
            target=target,
            created_at=sim.now,
            bits=self.config.report_bits,
            body=body,
            hops=[self.node.id],
        )

    def on_detection(self, event: SensingEvent) -> bool:
        """Report a detected intruder unless it was reported within the hold-off."""
        sim = self.node.sim
        metrics = sim.metrics
        last = self.last_report.get(event.intruder)
        if last is not None and sim.now - last < self.config.hold_off:
            metrics.detect_suppressed += 1
            return False
        self.last_report[event.intruder] = sim.now

        report = DetectReport(event.event_id, event.beacon_id, self.node.id, event.intruder, event.emitted_at)
        metrics.detect_sent += 1
        self.node.route(self._message(MessageKind.DETECT, self.config.base_station, report))

        request = AuthRequest(sim.next_message_id(), self.node.id, event.intruder, sim.now)
        self.pending[request.request_id] = request
        metrics.auth_req_sent += 1
        self.node.link_send(BROADCAST, self._message(MessageKind.AUTH_REQ, event.intruder, request))
        sim.post(sim.now + self.config.auth_timeout, EventKind.AUTH_TIMEOUT, self.node.id, request.request_id)
        return True

    def on_auth(self, msg: Message) -> bool:
        if msg.kind is not MessageKind.AUTH_RESP:
            return False
        sim = self.node.sim
        request = self.pending.pop(msg.body.request_id, None)
        if request is None:
            sim.metrics.counters["late-auth-responses"] += 1
            return False
        sim.metrics.record_auth_latency(request.sent_at, sim.now)
        self.node.route(self._message(MessageKind.AUTH_NOTIFY, self.config.base_station, request))
        return True

    def on_auth_timeout(self, request_id: int) -> None:
        """Close an unanswered request. Nothing is sent: the base sees a DETECT without AUTH_NOTIFY."""
        request = self.pending.pop(request_id, None)
        if request is not None:
            self.node.sim.metrics.counters["auth-timeouts"] += 1
            logger.debug("node %d: intruder %d did not authenticate", self.node.id, request.intruder)


class IntruderApp:
    """Authorized intruders answer authentication requests addressed to them; others stay silent."""

    def __init__(self, node: NodePort, role: Role, report_bits: int = REPORT_BITS):
        self.node = node
        self.authorized = role is Role.INTRUDER_AUTHORIZED
        self.report_bits = report_bits

    def on_auth(self, msg: Message) -> bool:
        if msg.kind is not MessageKind.AUTH_REQ or msg.body.intruder != self.node.id:
            return False
        if not self.authorized:
            return False
        sim = self.node.sim
        response = Message(
            msg_id=sim.next_message_id(),
            kind=MessageKind.AUTH_RESP,
            origin=self.node.id,
            target=msg.body.sensor,
            created_at=sim.now,
            bits=self.report_bits,
            body=msg.body,
            hops=[self.node.id],
        )
        sim.metrics.auth_resp_sent += 1
        self.node.link_send(msg.body.sensor, response)
        return True


def record_at_base(sim: Simulator, msg: Message) -> None:
    """Account a message that reached its final destination."""
    metrics = sim.metrics
    match msg.kind:
        case MessageKind.DATA:
            metrics.record_received(msg.flow, msg.app_seq, sim.now)
        case MessageKind.DETECT:
            report: DetectReport = msg.body
            metrics.record_detect(report.event_id, report.beacon_id, report.emitted_at, sim.now)
        case MessageKind.AUTH_NOTIFY:
            metrics.record_auth_notify(msg.body.request_id, sim.now)
    metrics.hops[msg.msg_id] = list(msg.hops)
