"""
Discrete-event engine for the IR-UWB sensor network simulator: virtual clock, ordered event queue,
seeded per-(node, purpose) random streams and the node registry.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from metrics import Metrics

logger = logging.getLogger(__name__)

PS_PER_S = 1e12  # chip arithmetic is done in integer picoseconds


def to_ps(seconds: float) -> int:
    """Convert seconds to integer picoseconds."""
    return int(round(seconds * PS_PER_S))


def from_ps(picoseconds: int) -> float:
    return picoseconds / PS_PER_S


class SimulationError(RuntimeError):
    """Raised when the model reaches an inconsistent state."""


class CausalityError(SimulationError):
    """Raised when an event is scheduled before the current clock."""


class EventKind(enum.Enum):
    PHY_TX_START = "phy-tx-start"
    PHY_TX_END = "phy-tx-end"
    PHY_RX_ARRIVAL = "phy-rx-arrival"
    PHY_RX_END = "phy-rx-end"
    MAC_TIMEOUT = "mac-timeout"
    MAC_ACK = "mac-ack"
    CSMA_BACKOFF = "csma-backoff"
    SLOT_BOUNDARY = "slot-boundary"
    APP_GENERATE = "app-generate"
    SENSOR_BEACON = "sensor-beacon"
    AUTH_TIMEOUT = "auth-timeout"
    ROUTE_EXPIRY = "route-expiry"
    SIM_END = "sim-end"


@dataclass(order=True, slots=True)
class Event:
    fire_time: float
    sequence_no: int
    kind: EventKind = field(compare=False)
    target_node: int = field(compare=False)
    payload: Any = field(compare=False, default=None)


# Random streams ----------------------------------------------------------------------------------

PURPOSES = {
    "mac-backoff": 1,
    "channel-fading": 2,
    "bit-errors": 3,
    "app-traffic": 4,
    "sensing": 5,
    "mobility": 6,
    "ths": 7,
    "clock": 8,
    "routing": 9,
}


@dataclass(frozen=True)
class Uniform01:
    pass


@dataclass(frozen=True)
class UniformInt:
    lo: int
    hi: int


@dataclass(frozen=True)
class Exponential:
    rate: float


@dataclass(frozen=True)
class Gaussian:
    mean: float
    sd: float


Distribution = Uniform01 | UniformInt | Exponential | Gaussian


def seed_sequence(seed: int, node_id: int, purpose: str) -> np.random.SeedSequence:
    """Entropy for one stream. Node id -1 is the global (scenario-level) owner."""
    if purpose not in PURPOSES:
        raise ValueError(f"unknown stream purpose: {purpose}")
    return np.random.SeedSequence([int(seed), int(node_id) + 1, PURPOSES[purpose]])


class RngStream:
    """
    One deterministic random stream identified by (node id, purpose).

    Streams are independent PCG64 generators seeded from (global seed, node id, purpose), so drawing
    from one stream never shifts the values of another. ``fork`` derives a child stream bound to a
    key, e.g. the time of the event that draws, so a draw site gets the same values whatever
    happened on the parent stream before.
    """

    def __init__(self, seed: int, node_id: int, purpose: str, key: tuple[int, ...] = ()):
        self.seed = seed
        self.stream_id = (node_id, purpose)
        self.key = key
        entropy = seed_sequence(seed, node_id, purpose)
        if key:
            entropy = np.random.SeedSequence(entropy.entropy, spawn_key=key)
        self.generator = np.random.Generator(np.random.PCG64(entropy))
        self.draws = 0

    def fork(self, *key: int) -> RngStream:
        """Child stream of ``key`` (non-negative integers), independent of this stream's position."""
        if any(int(k) < 0 for k in key):
            raise ValueError(f"fork key must be non-negative, got {key}")
        return RngStream(self.seed, *self.stream_id, key=(*self.key, *(int(k) for k in key)))

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        self.draws += 1
        return float(self.generator.uniform(low, high))

    def integers(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed range [lo, hi]."""
        if lo > hi:
            raise ValueError(f"uniform_int with lo={lo} > hi={hi}")
        self.draws += 1
        return int(self.generator.integers(lo, hi, endpoint=True))

    def random(self, size: int) -> np.ndarray:
        self.draws += size
        return self.generator.random(size)


def rng_draw(stream: RngStream, distribution: Distribution) -> float | int:
    """
    Draw the next value of a stream.

    Parameters
    ----------
    stream : RngStream
        The stream to advance.
    distribution : Uniform01 | UniformInt | Exponential | Gaussian
        The law to sample.

    Returns
    -------
    float | int
        One sample. ``UniformInt`` is inclusive on both ends.
    """
    match distribution:
        case Uniform01():
            return stream.uniform()
        case UniformInt(lo, hi):
            return stream.integers(lo, hi)
        case Exponential(rate):
            if rate <= 0:
                raise ValueError("exponential rate must be positive")
            stream.draws += 1
            return float(stream.generator.exponential(1.0 / rate))
        case Gaussian(mean, sd):
            stream.draws += 1
            return float(stream.generator.normal(mean, sd))
    raise TypeError(f"unsupported distribution {distribution!r}")


# Nodes -------------------------------------------------------------------------------------------


class Role(enum.Enum):
    SENSOR = "sensor"
    ROUTER = "router"
    BASE_STATION = "base-station"
    INTRUDER_AUTHORIZED = "intruder-authorized"
    INTRUDER_UNAUTHORIZED = "intruder-unauthorized"

    @property
    def is_intruder(self) -> bool:
        return self in (Role.INTRUDER_AUTHORIZED, Role.INTRUDER_UNAUTHORIZED)


@dataclass
class NodeState:
    """
    Position, role and mobility of one node.

    ``position`` is (x, y, z) in meters with z the antenna height. A node with a ``path`` moves along
    the (x, y) waypoints at ``speed`` m/s starting from ``position`` and stops at the last waypoint.
    """

    id: int
    position: tuple[float, float, float]
    role: Role
    path: tuple[tuple[float, float], ...] = ()
    speed: float = 0.0
    radio: Any = None
    mac: Any = None

    def __post_init__(self):
        if not all(math.isfinite(c) for c in self.position):
            raise ValueError(f"node {self.id}: position must be finite")
        if self.position[2] <= 0:
            raise ValueError(f"node {self.id}: antenna height z must be > 0")
        if self.speed < 0:
            raise ValueError(f"node {self.id}: speed must be >= 0")
        if self.path and self.speed == 0:
            raise ValueError(f"node {self.id}: a waypoint path needs a positive speed")

    @property
    def mobile(self) -> bool:
        return bool(self.path) and self.speed > 0

    def position_at(self, t: float) -> tuple[float, float, float]:
        x, y, z = self.position
        if not self.mobile:
            return x, y, z
        remaining = self.speed * max(t, 0.0)
        for wx, wy in self.path:
            leg = math.hypot(wx - x, wy - y)
            if remaining <= leg:
                frac = remaining / leg if leg > 0 else 0.0
                return x + frac * (wx - x), y + frac * (wy - y), z
            remaining -= leg
            x, y = wx, wy
        return x, y, z


def distance(a: tuple[float, float, float], b: tuple[float, float, float]) -> float:
    """Horizontal distance between two positions; antenna heights enter the path-loss models."""
    return math.hypot(a[0] - b[0], a[1] - b[1])


# Engine ------------------------------------------------------------------------------------------


class Simulator:
    """
    Single-threaded discrete-event engine.

    Events fire in (fire_time, sequence_no) order. Handlers are registered per EventKind and receive
    the event. The clock never moves backwards; scheduling into the past raises CausalityError.
    """

    def __init__(self, seed: int = 0, trace: bool = False):
        self.seed = seed
        self.now = 0.0
        self.metrics = Metrics()
        self.nodes: dict[int, NodeState] = {}
        self._queue: list[Event] = []
        self._sequence = itertools.count()
        self._message_ids = itertools.count(1)
        self._handlers: dict[EventKind, Callable[[Event], None]] = {}
        self._streams: dict[tuple[int, str], RngStream] = {}
        self.processed = 0
        self.trace: list[tuple[float, int, str, int]] | None = [] if trace else None

    # registry
    def add_node(self, node: NodeState) -> None:
        if node.id in self.nodes:
            raise ValueError(f"duplicate node id {node.id}")
        self.nodes[node.id] = node

    def on(self, kind: EventKind, handler: Callable[[Event], None]) -> None:
        self._handlers[kind] = handler

    def rng(self, node_id: int, purpose: str) -> RngStream:
        key = (node_id, purpose)
        stream = self._streams.get(key)
        if stream is None:
            stream = RngStream(self.seed, node_id, purpose)
            self._streams[key] = stream
        return stream

    # queue
    def make_event(
        self, fire_time: float, kind: EventKind, target_node: int, payload: Any = None
    ) -> Event:
        return Event(fire_time, next(self._sequence), kind, target_node, payload)

    def schedule(self, event: Event) -> Event:
        if event.fire_time < self.now:
            raise CausalityError(
                f"{event.kind.value} for node {event.target_node} at {event.fire_time!r} "
                f"scheduled before now={self.now!r}"
            )
        heapq.heappush(self._queue, event)
        return event

    def post(
        self, fire_time: float, kind: EventKind, target_node: int, payload: Any = None
    ) -> Event:
        """Build and schedule an event in one call."""
        return self.schedule(self.make_event(fire_time, kind, target_node, payload))

    def next_message_id(self) -> int:
        return next(self._message_ids)

    def pending(self) -> int:
        return len(self._queue)

    def run_until(self, t_end: float) -> Metrics:
        """
        Process every event with fire_time <= t_end, then set the clock to t_end.

        Returns
        -------
        Metrics
            A copy of the metrics collected so far; later events do not change it.
        """
        if t_end < self.now:
            raise CausalityError(f"run_until({t_end}) is before now={self.now}")
        queue = self._queue
        while queue and queue[0].fire_time <= t_end:
            event = heapq.heappop(queue)
            self.now = event.fire_time
            handler = self._handlers.get(event.kind)
            if handler is None:
                raise SimulationError(f"no handler registered for {event.kind.value}")
            if self.trace is not None:
                self.trace.append(
                    (event.fire_time, event.sequence_no, event.kind.value, event.target_node)
                )
            handler(event)
            self.processed += 1
        self.now = t_end
        self.metrics.duration = t_end
        logger.debug("clock advanced to %.6f s after %d events", t_end, self.processed)
        return self.metrics.snapshot()
