"""
Per-node protocol stacks on a shared medium.

A ``Node`` wires a receiver (UWB or narrowband), a MAC, a routing agent and its applications. The
``Network`` owns the medium: a transmission is offered to every other node with the received power
of the link at that instant, arriving after the propagation delay; links below the receiver
sensitivity are not scheduled at all.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from apps import AppConfig, CbrApp, CbrTick, IntruderApp, SensorApp, record_at_base
from channel import (
    MIN_DISTANCE,
    ChannelModel,
    RadioParams,
    dbm_to_watts,
    noise_power,
    propagation_delay,
    received_power_dbm,
)
from mac import Frame, FrameKind, Mac, MacConfig
from phy_oqpsk import NarrowbandReceiver
from phy_uwb import ActiveTransmission, BerCurve, PulseParams, UwbReceiver, generate_ths
from routing import RREP_BITS, RREQ_BITS, AodvRouting, Message, MessageKind, StaticRouting
from sensing import SensingField
from sim_core import Event, EventKind, NodeState, Role, Simulator, distance

if TYPE_CHECKING:
    from scenario import Scenario

logger = logging.getLogger(__name__)


@dataclass
class LinkLayer:
    """Radio and frame geometry shared by every node of a run."""

    radio: RadioParams
    channel: ChannelModel
    pulse: PulseParams | None
    curve: BerCurve = field(default_factory=BerCurve)

    @property
    def uwb(self) -> bool:
        return self.radio.family == "uwb"

    def airtime(self, bits: int) -> float:
        if self.pulse is not None:
            return self.pulse.airtime(bits)
        return bits / self.radio.throughput

    @property
    def guard(self) -> float:
        return self.pulse.frame_duration if self.pulse is not None else 0.0


class Node:
    def __init__(self, network: Network, state: NodeState):
        self.network = network
        self.sim = network.sim
        self.state = state
        self.id = state.id
        link = network.link
        self.noise = noise_power(link.radio)
        bit_errors = self.sim.rng(self.id, "bit-errors")
        if link.uwb:
            self.receiver = UwbReceiver(self.id, link.radio, link.pulse, link.curve, self.noise, bit_errors)
            self.ths = generate_ths(self.sim.seed, self.id, link.pulse.ths_period, link.pulse.n_h)
            self.clock_offset = self.sim.rng(self.id, "clock").uniform(0.0, link.pulse.frame_duration)
        else:
            self.receiver = NarrowbandReceiver(self.id, link.radio, link.curve, self.noise, bit_errors)
            self.ths = None
            self.clock_offset = 0.0
        self.fading = self.sim.rng(self.id, "channel-fading")
        self.tx_end = 0.0
        self.mac = Mac(self.id, network.mac_config, self.sim, self, self._from_mac)
        self.routing: StaticRouting | AodvRouting | None = None
        self.sensor_app: SensorApp | None = None
        self.intruder_app: IntruderApp | None = None
        self.cbr: dict[str, CbrApp] = {}

    @property
    def role(self) -> Role:
        return self.state.role

    # PhyPort
    @property
    def transmitting(self) -> bool:
        return self.receiver.transmitting

    def transmit(self, frame: Frame) -> float:
        return self.network.transmit(self, frame)

    def channel_busy(self) -> bool:
        return self.receiver.sensed_power() >= self.receiver.sensitivity_w

    def airtime(self, bits: int) -> float:
        return self.network.link.airtime(bits)

    def busy_until(self) -> float:
        return max(self.tx_end, self.sim.now)

    # NodePort
    def route(self, msg: Message) -> None:
        if msg.target == self.id:
            record_at_base(self.sim, msg)
            return
        self.routing.forward(msg)

    def link_send(self, next_hop: int, msg: Message) -> None:
        frame = Frame(
            frame_id=self.network.next_frame_id(),
            kind=FrameKind.DATA,
            src=self.id,
            dst=next_hop,
            seq=self.mac.next_seq(),
            bits=msg.bits + self.mac.config.header_bits,
            payload=msg,
        )
        self.mac.enqueue(frame)

    # upward path
    def _from_mac(self, frame: Frame) -> None:
        self.on_message(frame.payload, frame.src)

    def on_message(self, msg: Message, from_node: int) -> None:
        match msg.kind:
            case MessageKind.RREQ | MessageKind.RREP:
                self.routing.on_control(msg, from_node)
            case MessageKind.AUTH_REQ:
                if self.intruder_app is not None:
                    self.intruder_app.on_auth(msg)
            case MessageKind.AUTH_RESP:
                if self.sensor_app is not None and msg.target == self.id:
                    self.sensor_app.on_auth(msg)
            case _:
                if self.role.is_intruder:
                    return
                if self.id in msg.hops:
                    self.sim.metrics.counters["routing-loops"] += 1
                    logger.warning("node %d: message %d looped via %s", self.id, msg.msg_id, msg.hops)
                    return
                msg.hops.append(self.id)
                self.route(msg)


class Network:
    """
    All nodes of one run and the medium between them.

    Engine events are dispatched here and forwarded to the target node's layers.
    """

    def __init__(
        self,
        sim: Simulator,
        link: LinkLayer,
        mac_config: MacConfig,
        app_config: AppConfig | None = None,
    ):
        self.sim = sim
        self.link = link
        self.mac_config = mac_config
        self.app_config = app_config or AppConfig()
        self.nodes: dict[int, Node] = {}
        self.sensing: SensingField | None = None
        self._frame_ids = itertools.count(1)
        self._tx_ids = itertools.count(1)
        self._register()

    def next_frame_id(self) -> int:
        return next(self._frame_ids)

    def add_node(self, state: NodeState) -> Node:
        self.sim.add_node(state)
        node = Node(self, state)
        self.nodes[state.id] = node
        return node

    # medium
    def transmit(self, node: Node, frame: Frame) -> float:
        sim = self.sim
        now = sim.now
        t_end = now + self.link.airtime(frame.bits)
        node.receiver.abort()
        node.receiver.transmitting = True
        node.tx_end = t_end
        sim.metrics.counters["phy-transmissions"] += 1
        if frame.kind is FrameKind.DATA:
            sim.metrics.counters["data-transmissions"] += 1
        n_frames = frame.bits * self.link.pulse.n_s if self.link.pulse is not None else 0
        tx_id = next(self._tx_ids)
        source = node.state.position_at(now)
        for other in self.nodes.values():
            if other is node:
                continue
            d = max(distance(source, other.state.position_at(now)), MIN_DISTANCE)
            level = received_power_dbm(self.link.radio, self.link.radio, d, self.link.channel, other.fading)
            if level < self.link.radio.sensitivity:
                continue
            delay = propagation_delay(d)
            arrival = ActiveTransmission(
                tx_id=tx_id,
                source=node.id,
                ths=node.ths,
                tau=delay + node.clock_offset,
                power=dbm_to_watts(level),
                t_start=now,
                t_end=t_end,
                packet=frame,
                propagation=delay,
                n_frames=n_frames,
            )
            sim.post(arrival.arrival, EventKind.PHY_RX_ARRIVAL, other.id, arrival)
            sim.post(arrival.departure, EventKind.PHY_RX_END, other.id, arrival)
        sim.post(t_end, EventKind.PHY_TX_END, node.id, frame)
        return t_end

    # dispatch
    def _register(self) -> None:
        sim = self.sim
        for kind in (EventKind.PHY_TX_START, EventKind.SLOT_BOUNDARY, EventKind.MAC_TIMEOUT, EventKind.CSMA_BACKOFF):
            sim.on(kind, self._on_mac_timer)
        sim.on(EventKind.MAC_ACK, self._on_mac_ack)
        sim.on(EventKind.PHY_TX_END, self._on_tx_end)
        sim.on(EventKind.PHY_RX_ARRIVAL, self._on_rx_arrival)
        sim.on(EventKind.PHY_RX_END, self._on_rx_end)
        sim.on(EventKind.APP_GENERATE, self._on_app_generate)
        sim.on(EventKind.SENSOR_BEACON, self._on_sensor_beacon)
        sim.on(EventKind.AUTH_TIMEOUT, self._on_auth_timeout)
        sim.on(EventKind.ROUTE_EXPIRY, self._on_route_timer)
        sim.on(EventKind.SIM_END, lambda event: None)

    def _on_mac_timer(self, event: Event) -> None:
        self.nodes[event.target_node].mac.on_timer(event.kind, event.payload)

    def _on_mac_ack(self, event: Event) -> None:
        self.nodes[event.target_node].mac.transmit_ack(event.payload)

    def _on_tx_end(self, event: Event) -> None:
        node = self.nodes[event.target_node]
        node.receiver.transmitting = False
        node.mac.on_tx_end(event.payload)

    def _on_rx_arrival(self, event: Event) -> None:
        self.nodes[event.target_node].receiver.on_arrival(event.payload)

    def _on_rx_end(self, event: Event) -> None:
        node = self.nodes[event.target_node]
        decision = node.receiver.on_end(event.payload)
        if decision is not None and decision.delivered:
            node.mac.on_receive(event.payload.packet)

    def _on_app_generate(self, event: Event) -> None:
        tick: CbrTick = event.payload
        self.nodes[event.target_node].cbr[tick.flow.name].generate(tick)

    def _on_sensor_beacon(self, event: Event) -> None:
        self.sensing.on_event(event.payload)

    def _on_auth_timeout(self, event: Event) -> None:
        self.nodes[event.target_node].sensor_app.on_auth_timeout(event.payload)

    def _on_route_timer(self, event: Event) -> None:
        self.nodes[event.target_node].routing.on_timer(event.payload)

    # construction
    @classmethod
    def from_scenario(cls, scenario: Scenario, seed: int, trace: bool = False) -> Network:
        """Build the simulator and every node stack of ``scenario`` for one seed."""
        sim = Simulator(seed, trace=trace)
        pulse = scenario.pulse if scenario.radio.family == "uwb" else None
        link = LinkLayer(scenario.radio, scenario.channel, pulse, scenario.curve)
        payload = max(
            [scenario.app.report_bits, RREQ_BITS, RREP_BITS, *(f.payload_bits for f in scenario.flows)]
        )
        mac_config = scenario.mac.with_defaults(
            link.airtime(payload + scenario.mac.header_bits),
            link.airtime(scenario.mac.ack_bits),
            link.guard,
        )
        network = cls(sim, link, mac_config, scenario.app)

        for spec in scenario.nodes:
            node = network.add_node(
                NodeState(spec.id, spec.position, spec.role, spec.path, spec.speed, scenario.radio, mac_config)
            )
            if scenario.routing == "aodv":
                node.routing = AodvRouting(node.id, sim, node.link_send, scenario.aodv, relay=not spec.role.is_intruder)
            else:
                node.routing = StaticRouting(node.id, sim, node.link_send, scenario.routes.get(node.id))
            if spec.role is Role.SENSOR:
                node.sensor_app = SensorApp(node, scenario.app)
            elif spec.role.is_intruder:
                node.intruder_app = IntruderApp(node, spec.role, scenario.app.report_bits)

        for flow in scenario.flows:
            app = CbrApp(network.nodes[flow.source], flow)
            network.nodes[flow.source].cbr[flow.name] = app
            app.start(scenario.duration)

        sensors = [n.id for n in scenario.nodes if n.role is Role.SENSOR]
        intruders = [n.id for n in scenario.nodes if n.role.is_intruder]
        if scenario.sensing is not None and sensors and intruders:
            network.sensing = SensingField(
                sim, scenario.sensing, sensors, intruders, network._on_detected, scenario.area
            )
            network.sensing.start(scenario.duration)
        sim.post(scenario.duration, EventKind.SIM_END, -1)
        logger.debug(
            "built %s with %d nodes, %d flows, slot %.6g s",
            scenario.name, len(network.nodes), len(scenario.flows), mac_config.slot_duration,
        )
        return network

    def _on_detected(self, event) -> None:
        app = self.nodes[event.sensor].sensor_app
        if app is not None:
            app.on_detection(event)

    def run(self, duration: float):
        return self.sim.run_until(duration)

