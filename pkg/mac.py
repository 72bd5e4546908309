"""
Medium access control.

Two ALOHA-like protocols for the UWB radio, UnSlotted (send at once) and Slotted (send on the next
slot front), both acknowledged per hop with a bounded number of retransmissions delayed by a random
number of units. An ACK obeys the same start rule as data: immediate for UnSlotted, on the next slot
front for Slotted. The narrowband baseline uses unslotted CSMA/CA without RTS/CTS and without
acknowledgements.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Protocol

from sim_core import EventKind, PS_PER_S, Simulator, to_ps

logger = logging.getLogger(__name__)

BROADCAST = -1
MAX_ONE_HOP_DELAY = 1e-6  # s, upper bound on single-hop propagation


class MacVariant(enum.Enum):
    UNSLOTTED = "unslotted"
    SLOTTED = "slotted"
    CSMA_CA = "csma-ca"

    @property
    def acknowledged(self) -> bool:
        return self is not MacVariant.CSMA_CA


@dataclass(frozen=True)
class MacConfig:
    """
    MAC variant and its parameters.

    ``slot_duration`` and ``ack_timeout`` left as None are derived from the frame sizes by
    ``with_defaults`` once the PHY is known.
    """

    variant: MacVariant = MacVariant.UNSLOTTED
    max_retx: int = 4
    ack_timeout: float | None = None
    backoff_window: int = 8
    ack_bits: int = 64
    header_bits: int = 64
    slot_duration: float | None = None
    queue_limit: int = 32
    # CSMA/CA
    min_be: int = 3
    max_be: int = 5
    max_csma_backoffs: int = 4
    unit_backoff: float = 0.32e-3
    cca_duration: float = 0.128e-3
    turnaround: float = 0.192e-3

    def __post_init__(self):
        if not 0 <= self.max_retx <= 6:
            raise ValueError("mac.max_retx must lie in [0, 6]")
        if self.backoff_window < 1:
            raise ValueError("mac.backoff_window must be >= 1")
        if self.ack_bits < 1 or self.header_bits < 0:
            raise ValueError("mac.ack_bits must be >= 1 and mac.header_bits >= 0")
        if self.queue_limit < 1:
            raise ValueError("mac.queue_limit must be >= 1")
        if not 0 <= self.min_be <= self.max_be:
            raise ValueError("mac.min_be must lie in [0, max_be]")
        if self.ack_timeout is not None and self.ack_timeout <= 0:
            raise ValueError("mac.ack_timeout must be positive")
        if self.slot_duration is not None and self.slot_duration <= 0:
            raise ValueError("mac.slot_duration must be positive")

    def with_defaults(self, data_airtime: float, ack_airtime: float, guard: float) -> MacConfig:
        """
        Fill the derived timings.

        Parameters
        ----------
        data_airtime : float
            Airtime of the longest data frame.
        ack_airtime : float
            Airtime of an ACK frame.
        guard : float
            Slot guard, one frame duration for UWB.
        """
        slot = self.slot_duration
        if slot is None:
            slot = data_airtime + ack_airtime + guard
        if self.variant is MacVariant.SLOTTED and to_ps(slot) < to_ps(data_airtime):
            raise ValueError(
                f"mac.slot_duration {slot!r} shorter than the data airtime {data_airtime!r}"
            )
        timeout = self.ack_timeout
        if timeout is None:
            timeout = 2.0 * (MAX_ONE_HOP_DELAY + ack_airtime)
        return replace(self, slot_duration=slot, ack_timeout=timeout)


class FrameKind(enum.Enum):
    DATA = "data"
    ACK = "ack"


@dataclass(eq=False)
class Frame:
    frame_id: int
    kind: FrameKind
    src: int
    dst: int
    seq: int
    bits: int
    payload: Any = None

    @property
    def broadcast(self) -> bool:
        return self.dst == BROADCAST


@dataclass
class CsmaState:
    be: int = 3
    nb: int = 0


@dataclass
class MacState:
    """Outbound queue and the in-service frame of one node."""

    queue: deque = field(default_factory=deque)
    current: Frame | None = None
    attempts: int = 0
    pending_ack: int | None = None
    slot_origin: float = 0.0
    csma: CsmaState | None = None


# Decisions ---------------------------------------------------------------------------------------


@dataclass(frozen=True)
class RetransmitAt:
    time: float


@dataclass(frozen=True)
class Drop:
    reason: str


@dataclass(frozen=True)
class Transmit:
    time: float


@dataclass(frozen=True)
class Backoff:
    until: float


def next_slot_boundary(t: float, slot: float, origin: float = 0.0) -> float:
    """First slot front at or after ``t``, computed on the integer picosecond grid."""
    slot_ps = to_ps(slot)
    offset_ps = to_ps(t - origin)
    k = -(-offset_ps // slot_ps)
    boundary = origin + k * slot_ps / PS_PER_S
    if boundary < t:
        boundary = origin + (k + 1) * slot_ps / PS_PER_S
    return boundary


def csma_backoff(state: CsmaState, config: MacConfig, stream) -> float:
    """Random backoff of uniform [0, 2^BE - 1] unit periods."""
    units = stream.integers(0, 2 ** state.be - 1)
    return units * config.unit_backoff


def tx_start_time(config: MacConfig, request_time: float, stream=None) -> float:
    """
    Earliest transmission start for a frame handed to the MAC at ``request_time``.

    CSMA/CA returns the start assuming the first clear channel assessment finds the channel idle.
    """
    if request_time < 0:
        raise ValueError("request_time must be >= 0")
    match config.variant:
        case MacVariant.UNSLOTTED:
            return request_time
        case MacVariant.SLOTTED:
            return next_slot_boundary(request_time, config.slot_duration)
        case MacVariant.CSMA_CA:
            delay = csma_backoff(CsmaState(config.min_be), config, stream)
            return request_time + delay + config.cca_duration + config.turnaround
    raise ValueError(f"unknown MAC variant {config.variant!r}")


def on_ack_timeout(
    state: MacState,
    config: MacConfig,
    stream,
    now: float,
    airtime: float,
) -> RetransmitAt | Drop:
    """
    Retransmit after u units, u uniform in [1, backoff_window], or give up.

    A unit is the frame airtime for UnSlotted and one slot for Slotted; slotted retries are
    realigned to a slot front.
    """
    if state.attempts > config.max_retx:
        return Drop("retry-limit")
    units = stream.integers(1, config.backoff_window)
    if config.variant is MacVariant.SLOTTED:
        return RetransmitAt(
            next_slot_boundary(now + units * config.slot_duration, config.slot_duration, state.slot_origin)
        )
    return RetransmitAt(now + units * airtime)


def csma_attempt(
    state: CsmaState,
    config: MacConfig,
    channel_busy: bool,
    now: float,
    stream,
) -> Transmit | Backoff | Drop:
    """
    Outcome of one clear channel assessment taken at ``now``.

    Idle: transmit after the CCA and the RX/TX turnaround. Busy: raise BE (capped at maxBE) and back
    off again, unless macMaxCSMABackoffs is exceeded.
    """
    if not channel_busy:
        return Transmit(now + config.cca_duration + config.turnaround)
    state.nb += 1
    state.be = min(state.be + 1, config.max_be)
    if state.nb > config.max_csma_backoffs:
        return Drop("channel-access-failure")
    return Backoff(now + config.cca_duration + csma_backoff(state, config, stream))


# Driver ------------------------------------------------------------------------------------------


class PhyPort(Protocol):
    transmitting: bool

    def transmit(self, frame: Frame) -> float: ...

    def channel_busy(self) -> bool: ...

    def airtime(self, bits: int) -> float: ...

    def busy_until(self) -> float: ...


class Mac:
    """
    Per-node MAC process.

    Frames wait in a drop-tail queue and are served one at a time. Timers are engine events that
    carry a token; a timer whose token no longer matches the node's current one is stale and
    ignored.
    """

    def __init__(
        self,
        node_id: int,
        config: MacConfig,
        sim: Simulator,
        phy: PhyPort,
        deliver: Callable[[Frame], None],
        failed: Callable[[Frame, str], None] | None = None,
    ):
        self.node_id = node_id
        self.config = config
        self.sim = sim
        self.phy = phy
        self.deliver = deliver
        self.failed = failed
        self.state = MacState()
        self.stream = sim.rng(node_id, "mac-backoff")
        self.last_seq: dict[int, int] = {}
        self._seq = 0
        self._token = 0

    # outbound
    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def enqueue(self, frame: Frame) -> bool:
        state = self.state
        if len(state.queue) >= self.config.queue_limit:
            self.sim.metrics.counters["queue-drops"] += 1
            self._fail(frame, "queue-full")
            return False
        state.queue.append(frame)
        if state.current is None:
            self._serve_next()
        return True

    def _serve_next(self) -> None:
        state = self.state
        if state.current is not None or not state.queue:
            return
        state.current = state.queue.popleft()
        state.attempts = 0
        state.pending_ack = None
        if self.config.variant is MacVariant.CSMA_CA:
            state.csma = CsmaState(self.config.min_be)
            self._arm(self.sim.now + csma_backoff(state.csma, self.config, self.stream), EventKind.CSMA_BACKOFF)
        else:
            self._start_at(tx_start_time(self.config, self.sim.now))

    def _arm(self, t: float, kind: EventKind) -> None:
        self._token += 1
        self.sim.post(t, kind, self.node_id, self._token)

    def _start_at(self, t: float) -> None:
        kind = EventKind.SLOT_BOUNDARY if self.config.variant is MacVariant.SLOTTED else EventKind.PHY_TX_START
        self._arm(t, kind)

    def on_timer(self, kind: EventKind, token: int) -> None:
        if token != self._token or self.state.current is None:
            return
        match kind:
            case EventKind.PHY_TX_START | EventKind.SLOT_BOUNDARY:
                self._transmit_current()
            case EventKind.MAC_TIMEOUT:
                self._ack_timeout()
            case EventKind.CSMA_BACKOFF:
                self._clear_channel_assessment()

    def _transmit_current(self) -> None:
        state = self.state
        if self.phy.transmitting:
            # sending an ACK, try again once the radio is free
            self._start_at(tx_start_time(self.config, self.phy.busy_until()))
            return
        state.attempts += 1
        self._token += 1
        self.phy.transmit(state.current)

    def on_tx_end(self, frame: Frame) -> None:
        state = self.state
        if frame is not state.current:
            return
        if frame.broadcast or not self.config.variant.acknowledged:
            self._complete()
            return
        state.pending_ack = frame.seq
        self._arm(self.ack_expected_from(self.sim.now) + self.config.ack_timeout, EventKind.MAC_TIMEOUT)

    def ack_expected_from(self, t_end: float) -> float:
        """Earliest start of the ACK to a data frame whose transmission ended at ``t_end``."""
        if self.config.variant is MacVariant.SLOTTED:
            return next_slot_boundary(t_end + MAX_ONE_HOP_DELAY, self.config.slot_duration, self.state.slot_origin)
        return t_end

    def _ack_timeout(self) -> None:
        state = self.state
        self.sim.metrics.counters["ack-timeouts"] += 1
        state.pending_ack = None
        # keyed by time so that the draw does not depend on how many draws came before
        stream = self.stream.fork(to_ps(self.sim.now), state.attempts)
        decision = on_ack_timeout(state, self.config, stream, self.sim.now, self.phy.airtime(state.current.bits))
        match decision:
            case RetransmitAt(time):
                self.sim.metrics.counters["retransmissions"] += 1
                self._start_at(time)
            case Drop(reason):
                self.sim.metrics.counters["mac-failures"] += 1
                frame = state.current
                state.current = None
                logger.debug("node %d: frame %d dropped (%s)", self.node_id, frame.frame_id, reason)
                self._fail(frame, reason)
                self._serve_next()

    def _clear_channel_assessment(self) -> None:
        state = self.state
        outcome = csma_attempt(state.csma, self.config, self.phy.channel_busy(), self.sim.now, self.stream)
        match outcome:
            case Transmit(time):
                self._arm(time, EventKind.PHY_TX_START)
            case Backoff(until):
                self._arm(until, EventKind.CSMA_BACKOFF)
            case Drop(reason):
                self.sim.metrics.counters["channel-access-failures"] += 1
                frame = state.current
                state.current = None
                self._fail(frame, reason)
                self._serve_next()

    def _complete(self) -> None:
        self._token += 1
        self.state.current = None
        self.state.pending_ack = None
        self._serve_next()

    def _fail(self, frame: Frame, reason: str) -> None:
        if self.failed is not None:
            self.failed(frame, reason)

    # inbound
    def on_receive(self, frame: Frame) -> None:
        """A frame decoded by the PHY."""
        if frame.dst not in (self.node_id, BROADCAST):
            return
        if frame.kind is FrameKind.ACK:
            self._on_ack(frame)
            return
        on_rx_data(self, frame)

    def _on_ack(self, ack: Frame) -> None:
        state = self.state
        current = state.current
        if current is None or state.pending_ack != ack.seq or ack.src != current.dst:
            return
        self._complete()

    def send_ack(self, data: Frame) -> None:
        """Acknowledge ``data`` now (UnSlotted) or on the next slot front (Slotted)."""
        ack = Frame(
            frame_id=-data.frame_id,
            kind=FrameKind.ACK,
            src=self.node_id,
            dst=data.src,
            seq=data.seq,
            bits=self.config.ack_bits,
        )
        if self.config.variant is MacVariant.SLOTTED:
            t = next_slot_boundary(self.sim.now, self.config.slot_duration, self.state.slot_origin)
            self.sim.post(t, EventKind.MAC_ACK, self.node_id, ack)
            return
        self.transmit_ack(ack)

    def transmit_ack(self, ack: Frame) -> None:
        if self.phy.transmitting:
            self.sim.metrics.counters["acks-skipped"] += 1
            return
        self.sim.metrics.counters["acks-sent"] += 1
        self.phy.transmit(ack)


def on_rx_data(mac: Mac, frame: Frame) -> bool:
    """
    Acknowledge a delivered unicast data frame and pass it up once.

    A sender serves one frame at a time in sequence order, so a frame whose sequence number does not
    exceed the last one delivered from the same sender is a retransmission.

    Returns True when the frame went to the upper layer, False for a duplicate.
    """
    if not frame.broadcast and mac.config.variant.acknowledged:
        mac.send_ack(frame)
    if frame.seq <= mac.last_seq.get(frame.src, 0):
        mac.sim.metrics.counters["duplicates"] += 1
        return False
    mac.last_seq[frame.src] = frame.seq
    mac.deliver(frame)
    return True

