"""
Sensing channel between intruders and sensor devices.

Intruders emit a beacon at the sensors' sampling rate. Each sensor within sensing range sees the
beacon at a level given by two-ray ground path loss plus Rice fading, and decides with two
thresholds: below the sensitivity nothing is sensed, between the thresholds detection is a coin
flip, above the detection threshold it succeeds with the configured reliability. Beacons of two or
more intruders reaching a sensor within one sampling period collide and are missed.
"""

from __future__ import annotations

import enum
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from channel import MIN_DISTANCE, ChannelModel, ChannelVariant, fading_gain, two_ray_loss
from sim_core import EventKind, NodeState, Simulator, distance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SensingParams:
    """
    Sensor device model.

    ``sensing_tx_power`` is the level of the emitted signal; ``frequency`` only places the two-ray
    crossover distance.
    """

    sampling_rate: float = 0.5  # Hz
    sensitivity_threshold: float = -90.0  # dBm
    detection_threshold: float = -75.0  # dBm
    reliability: float = 0.95
    mid_band_probability: float = 0.5
    sensing_tx_power: float = -5.0  # dBm
    sensing_range: float = 20.0  # m
    k_factor: float = 4.0
    fading: bool = True
    frequency: float = 0.8e9  # Hz

    def __post_init__(self):
        if self.sampling_rate <= 0:
            raise ValueError("sensing.sampling_rate must be positive")
        if self.sensitivity_threshold > self.detection_threshold:
            raise ValueError("sensing.sensitivity_threshold must be <= sensing.detection_threshold")
        for name in ("reliability", "mid_band_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"sensing.{name} must lie in [0, 1]")
        if self.sensing_range <= 0 or self.k_factor < 0 or self.frequency <= 0:
            raise ValueError("sensing.sensing_range, sensing.frequency must be > 0, sensing.k_factor >= 0")

    @property
    def period(self) -> float:
        return 1.0 / self.sampling_rate

    @property
    def channel(self) -> ChannelModel:
        if self.fading:
            return ChannelModel(ChannelVariant.RICE, self.k_factor, ChannelVariant.TWO_RAY)
        return ChannelModel(ChannelVariant.TWO_RAY, path_loss=ChannelVariant.TWO_RAY)


class Outcome(enum.Enum):
    DETECTED = "detected"
    MISSED_BELOW_SENSITIVITY = "missed-below-sensitivity"
    MISSED_PROBABILISTIC = "missed-probabilistic"
    MISSED_COLLISION = "missed-collision"


@dataclass
class SensingEvent:
    event_id: int
    beacon_id: int
    intruder: int
    sensor: int
    emitted_at: float
    level: float
    outcome: Outcome | None = None


def intruder_beacon(
    node: NodeState,
    params: SensingParams,
    stream,
    t_end: float,
    area: tuple[float, float] | None = None,
) -> np.ndarray:
    """
    Emission times of one intruder over [0, t_end).

    The phase is drawn once, uniformly in one period. With ``area`` (width, height, origin at the
    corner) emissions while the node is outside the field are skipped.
    """
    if not node.role.is_intruder:
        raise ValueError(f"node {node.id} is not an intruder")
    phase = stream.uniform(0.0, params.period)
    count = max(0, math.ceil((t_end - phase) / params.period))
    times = phase + np.arange(count) * params.period
    times = times[times < t_end]
    if area is not None:
        width, height = area
        inside = [
            0.0 <= x <= width and 0.0 <= y <= height
            for x, y, _ in (node.position_at(t) for t in times)
        ]
        times = times[np.array(inside, dtype=bool)] if times.size else times
    return times


def sense_level(
    intruder: tuple[float, float, float],
    sensor: tuple[float, float, float],
    params: SensingParams,
    stream=None,
) -> float:
    """Sensed level in dBm; one Rice draw from ``stream`` when fading is on."""
    d = max(distance(intruder, sensor), MIN_DISTANCE)
    level = params.sensing_tx_power - two_ray_loss(d, intruder[2], sensor[2], params.frequency)
    if params.fading and stream is not None:
        level += 10.0 * math.log10(max(fading_gain(params.channel, stream), 1e-30))
    return level


def sense_decision(level: float, params: SensingParams, concurrent: int, stream) -> Outcome:
    if concurrent >= 2:
        return Outcome.MISSED_COLLISION
    if level < params.sensitivity_threshold:
        return Outcome.MISSED_BELOW_SENSITIVITY
    p = params.reliability if level >= params.detection_threshold else params.mid_band_probability
    if stream.uniform() < p:
        return Outcome.DETECTED
    return Outcome.MISSED_PROBABILISTIC


@dataclass(frozen=True)
class BeaconEmission:
    beacon_id: int
    intruder: int


@dataclass(frozen=True)
class BeaconDecision:
    event: SensingEvent


class SensingField:
    """
    Schedules every intruder's beacons and turns them into sensing events.

    A decision is taken half a period after the beacon, once every beacon of its collision window
    has reached the sensor.
    """

    def __init__(
        self,
        sim: Simulator,
        params: SensingParams,
        sensors: list[int],
        intruders: list[int],
        on_detected: Callable[[SensingEvent], None],
        area: tuple[float, float] | None = None,
        history: int = 1024,
    ):
        self.sim = sim
        self.params = params
        self.sensors = list(sensors)
        self.intruders = list(intruders)
        self.on_detected = on_detected
        self.area = area
        self.heard: dict[int, deque[tuple[float, int]]] = {s: deque() for s in self.sensors}
        self.events: deque[SensingEvent] = deque(maxlen=history)  # most recent only
        self._beacon_ids = 0
        self._event_ids = 0

    def start(self, t_end: float) -> int:
        scheduled = 0
        for intruder in self.intruders:
            node = self.sim.nodes[intruder]
            times = intruder_beacon(node, self.params, self.sim.rng(intruder, "sensing"), t_end, self.area)
            for t in times:
                self._beacon_ids += 1
                self.sim.post(float(t), EventKind.SENSOR_BEACON, intruder, BeaconEmission(self._beacon_ids, intruder))
            scheduled += times.size
        logger.debug("scheduled %d beacons for %d intruders", scheduled, len(self.intruders))
        return scheduled

    def on_event(self, payload) -> None:
        match payload:
            case BeaconEmission():
                self._emit(payload)
            case BeaconDecision(event):
                self._decide(event)

    def _emit(self, beacon: BeaconEmission) -> None:
        now = self.sim.now
        metrics = self.sim.metrics
        metrics.beacons_emitted += 1
        source = self.sim.nodes[beacon.intruder].position_at(now)
        in_range = 0
        for sensor in self.sensors:
            position = self.sim.nodes[sensor].position_at(now)
            if distance(source, position) > self.params.sensing_range:
                continue
            in_range += 1
            level = sense_level(source, position, self.params, self.sim.rng(sensor, "sensing"))
            if level >= self.params.sensitivity_threshold:
                self.heard[sensor].append((now, beacon.intruder))
            self._event_ids += 1
            event = SensingEvent(self._event_ids, beacon.beacon_id, beacon.intruder, sensor, now, level)
            self.events.append(event)
            self.sim.post(now + 0.5 * self.params.period, EventKind.SENSOR_BEACON, sensor, BeaconDecision(event))
        if in_range:
            metrics.beacons_in_range += 1

    def concurrent(self, sensor: int, t: float) -> int:
        """Distinct intruders heard by ``sensor`` within half a period either side of ``t``."""
        half = 0.5 * self.params.period
        heard = self.heard[sensor]
        while heard and heard[0][0] < t - self.params.period:
            heard.popleft()
        return len({who for when, who in heard if abs(when - t) <= half})

    def _decide(self, event: SensingEvent) -> None:
        concurrent = self.concurrent(event.sensor, event.emitted_at)
        event.outcome = sense_decision(event.level, self.params, concurrent, self.sim.rng(event.sensor, "sensing"))
        self.sim.metrics.sensing_outcomes[event.outcome.value] += 1
        if event.outcome is Outcome.DETECTED:
            self.on_detected(event)
