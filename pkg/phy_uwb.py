"""
TH-IR-UWB physical layer.

Each transmitter hops its pulse position over the N_h chips of every frame following a pseudo-random
time hopping sequence (THS). A receiver locks on one transmission, folds every concurrent
transmission into its own frame grid (the reception THS), stores the quantized chip positions in an
interference matrix and evaluates, frame by frame, the SINR of the locked pulses. Packet success is
then drawn bit by bit from a BER-versus-SNR curve.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, NamedTuple

import numpy as np
from scipy.special import erfc

from channel import dbm_to_watts
from sim_core import PS_PER_S, seed_sequence, to_ps

logger = logging.getLogger(__name__)

BER_FLOOR = 1e-12
BER_CAP = 0.5


class BerCurveError(ValueError):
    """Raised for a malformed BER curve file."""


@dataclass(frozen=True)
class PulseParams:
    """
    Frame and chip geometry.

    The chip duration is held in integer picoseconds and the frame duration is derived from it, so
    T_f = N_h * T_c holds exactly.

    Parameters
    ----------
    chip_ps : int
        Chip duration T_c in picoseconds.
    n_h : int
        Chips per frame.
    n_s : int
        Pulses (frames) per bit.
    ths_period : int
        Length L of every time hopping sequence.
    """

    chip_ps: int = 10_000
    n_h: int = 100
    n_s: int = 1
    ths_period: int = 64

    def __post_init__(self):
        if self.chip_ps <= 0:
            raise ValueError("pulse.chip_duration must be positive")
        if self.n_h < 2:
            raise ValueError("pulse.chips_per_frame must be >= 2")
        if self.n_s < 1:
            raise ValueError("pulse.pulses_per_symbol must be >= 1")
        if self.ths_period < 1:
            raise ValueError("pulse.ths_period must be >= 1")

    @classmethod
    def from_seconds(
        cls,
        chip_duration: float,
        n_h: int,
        n_s: int = 1,
        ths_period: int = 64,
        frame_duration: float | None = None,
    ) -> PulseParams:
        pulse = cls(to_ps(chip_duration), n_h, n_s, ths_period)
        if frame_duration is not None and to_ps(frame_duration) != pulse.frame_ps:
            raise ValueError(
                f"pulse.frame_duration {frame_duration!r} != chips_per_frame x chip_duration "
                f"({pulse.frame_duration!r})"
            )
        return pulse

    @property
    def frame_ps(self) -> int:
        return self.n_h * self.chip_ps

    @property
    def chip_duration(self) -> float:
        return self.chip_ps / PS_PER_S

    @property
    def frame_duration(self) -> float:
        return self.frame_ps / PS_PER_S

    @property
    def bit_rate(self) -> float:
        return 1.0 / (self.n_s * self.frame_duration)

    def airtime(self, bits: int) -> float:
        return bits * self.n_s * self.frame_ps / PS_PER_S

    def check_throughput(self, throughput: float) -> None:
        if abs(self.bit_rate - throughput) > 1e-3 * throughput:
            raise ValueError(
                f"pulse geometry gives {self.bit_rate:.6g} bit/s but radio.throughput is {throughput:.6g}"
            )


@dataclass(frozen=True)
class TimeHoppingSequence:
    code: np.ndarray
    n_h: int

    def __post_init__(self):
        if self.code.size == 0 or self.code.min() < 0 or self.code.max() >= self.n_h:
            raise ValueError("THS elements must lie in [0, n_h)")

    @property
    def period(self) -> int:
        return int(self.code.size)

    def chips(self, frames: np.ndarray) -> np.ndarray:
        return self.code[np.mod(frames, self.period)]


def generate_ths(seed: int, node_id: int, length: int, n_h: int) -> TimeHoppingSequence:
    """Pseudo-random THS of ``length`` chips uniform over [0, n_h), deterministic in (seed, node_id)."""
    if length < 1 or n_h < 2:
        raise ValueError("generate_ths needs length >= 1 and n_h >= 2")
    generator = np.random.Generator(np.random.PCG64(seed_sequence(seed, node_id, "ths")))
    return TimeHoppingSequence(generator.integers(0, n_h, size=length, dtype=np.int64), n_h)


class ReceptionThs(NamedTuple):
    rho_ps: np.ndarray
    chips: np.ndarray

    @property
    def rho(self) -> np.ndarray:
        return self.rho_ps / PS_PER_S


def fold_chips(code_values: np.ndarray, tau_ps: int, pulse: PulseParams) -> ReceptionThs:
    rho_ps = np.mod(code_values.astype(np.int64) * pulse.chip_ps + tau_ps, pulse.frame_ps)
    return ReceptionThs(rho_ps, rho_ps // pulse.chip_ps)


def reception_ths(ths: TimeHoppingSequence, tau: float, pulse: PulseParams) -> ReceptionThs:
    """
    Reception THS of one transmitter seen after delay ``tau``.

    rho_j = (T_c * c_j + tau) mod T_f and q_j = floor(rho_j / T_c), both over one code period and
    computed in integer picoseconds.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return fold_chips(ths.code, to_ps(tau), pulse)


@dataclass(eq=False)
class ActiveTransmission:
    """
    One transmission as seen by one receiver.

    ``t_start`` and ``t_end`` are the transmitter's radiation interval. ``tau`` is the first-pulse
    offset at this receiver (propagation plus the transmitter's clock offset); ``propagation`` alone
    drives the arrival events.
    """

    tx_id: int
    source: int
    ths: TimeHoppingSequence
    tau: float
    power: float
    t_start: float
    t_end: float
    packet: Any
    propagation: float = 0.0
    n_frames: int = 0

    @property
    def arrival(self) -> float:
        return self.t_start + self.propagation

    @property
    def departure(self) -> float:
        return self.t_end + self.propagation


@dataclass
class InterferenceMatrix:
    """
    Quantized reception chip per (transmission row, frame column) at one receiver.

    Row 0 is the user of interest. ``frames`` holds the user-of-interest frame index of each column.
    Entries are in [0, N_h) where the row has a pulse in that frame and -1 where it has none. An
    interferer not aligned on the receiver frames can put two pulses in one frame, its own pulse and
    the previous one wrapped over the frame end; ``spill`` holds the chip of that second pulse.
    """

    sources: list[int]
    frames: np.ndarray
    chips: np.ndarray
    rows: list[ActiveTransmission] = field(default_factory=list)
    spill: np.ndarray | None = None

    def __post_init__(self):
        if self.spill is None:
            self.spill = np.full_like(self.chips, -1)


def place_pulses(tx: ActiveTransmission, delta_ps: int, pulse: PulseParams) -> tuple[np.ndarray, np.ndarray]:
    """
    Receiver frame and chip of every pulse of ``tx``.

    Own frame m radiates at delta + m * T_f + c_m * T_c after the receiver frame origin, with c_m
    taken from the transmitter's own code position. Works in integer picoseconds.
    """
    own = np.arange(tx.n_frames or tx.packet.bits * pulse.n_s, dtype=np.int64)
    at_ps = delta_ps + own * pulse.frame_ps + tx.ths.chips(own) * pulse.chip_ps
    frame, within = np.divmod(at_ps, pulse.frame_ps)
    return frame, within // pulse.chip_ps


def build_interference_matrix(
    user_of_interest: ActiveTransmission,
    others: Iterable[ActiveTransmission],
    pulse: PulseParams,
    t_from: float | None = None,
    t_to: float | None = None,
) -> InterferenceMatrix:
    """
    Build the interference matrix of a locked reception.

    The receiver frame origin is the start of the first frame of the user of interest. Every pulse of
    another transmission is placed on the picosecond timeline at its offset delta from that origin,
    so a pulse pushed past the end of a frame lands in the next receiver frame.

    Parameters
    ----------
    user_of_interest : ActiveTransmission
        The locked transmission (row 0, tau = 0 by construction).
    others : iterable of ActiveTransmission
        Concurrent transmissions.
    pulse : PulseParams
        Frame geometry shared by all transmitters.
    t_from, t_to : float, optional
        Restrict the columns to user frames starting within [t_from, t_to] (receiver time).
    """
    n_frames = user_of_interest.n_frames or user_of_interest.packet.bits * pulse.n_s
    frames = np.arange(n_frames, dtype=np.int64)
    if t_from is not None or t_to is not None:
        starts = user_of_interest.arrival + frames * pulse.frame_duration
        keep = np.ones(n_frames, dtype=bool)
        if t_from is not None:
            keep &= starts >= t_from - 1e-15
        if t_to is not None:
            keep &= starts <= t_to + 1e-15
        frames = frames[keep]

    rows = [user_of_interest, *others]
    chips = np.full((len(rows), frames.size), -1, dtype=np.int64)
    spill = np.full_like(chips, -1)
    chips[0] = user_of_interest.ths.chips(frames)
    first = int(frames[0]) if frames.size else 0
    for k, tx in enumerate(rows[1:], start=1):
        delta_ps = int(round(((tx.t_start - user_of_interest.t_start) + (tx.tau - user_of_interest.tau)) * PS_PER_S))
        frame, chip = place_pulses(tx, delta_ps, pulse)
        column = frame - first
        inside = (column >= 0) & (column < frames.size)
        column, chip = column[inside], chip[inside]
        # consecutive own frames map to distinct columns, except a wrapped pulse meeting the next one
        wrapped = np.zeros(column.size, dtype=bool)
        wrapped[:-1] = column[:-1] == column[1:]
        chips[k, column[~wrapped]] = chip[~wrapped]
        spill[k, column[wrapped]] = chip[wrapped]
    return InterferenceMatrix([tx.source for tx in rows], frames, chips, rows, spill)


def colliding_frames(matrix: InterferenceMatrix) -> dict[int, set[int]]:
    """For every interferer row k >= 1, the frame indices where one of its pulses shares the user's chip."""
    user = matrix.chips[0]
    return {
        k: set(matrix.frames[(matrix.chips[k] == user) | (matrix.spill[k] == user)].tolist())
        for k in range(1, matrix.chips.shape[0])
    }


def sinr_vector(matrix: InterferenceMatrix, powers: list[float] | np.ndarray, noise: float) -> np.ndarray:
    """
    Per-frame SINR of the user of interest.

    S_j = P_1 / (noise + sum of P_k over interferer pulses sitting in the same chip of frame j).
    """
    if powers[0] <= 0 or noise <= 0:
        raise ValueError("sinr_vector needs a positive user power and noise")
    user = matrix.chips[0]
    interference = np.zeros(user.size)
    for k in range(1, matrix.chips.shape[0]):
        hits = (matrix.chips[k] == user).astype(float) + (matrix.spill[k] == user)
        interference = interference + powers[k] * hits
    return powers[0] / (noise + interference)


# BER curves --------------------------------------------------------------------------------------


def q_function(x):
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


@dataclass(frozen=True)
class BerCurve:
    """
    BER versus SNR relationship.

    Without a table the coherent antipodal curve BER = Q(sqrt(2 * snr)) is used. A table holds
    strictly increasing SNR values in dB with their BER and is interpolated linearly in log10(BER).
    """

    snr_db: np.ndarray | None = None
    ber: np.ndarray | None = None
    name: str = "analytic"

    def __post_init__(self):
        if (self.snr_db is None) != (self.ber is None):
            raise BerCurveError("snr_db and ber must be given together")
        if self.snr_db is not None:
            if self.snr_db.size < 2 or self.snr_db.shape != self.ber.shape:
                raise BerCurveError("a BER table needs at least two (snr_db, ber) rows")
            if np.any(np.diff(self.snr_db) <= 0):
                raise BerCurveError("SNR column must be strictly increasing")
            if np.any(self.ber <= 0) or np.any(self.ber > BER_CAP):
                raise BerCurveError("BER values must lie in (0, 0.5]")

    @property
    def analytic(self) -> bool:
        return self.snr_db is None


def load_ber_curve(path: str | Path | None) -> BerCurve:
    """
    Load a ``snr_db,ber`` text file ('#' comments allowed). No path gives the analytic curve.
    """
    if path is None:
        return BerCurve()
    try:
        table = np.loadtxt(path, delimiter=",", comments="#", ndmin=2, dtype=float)
    except (OSError, ValueError) as err:
        raise BerCurveError(f"{path}: {err}") from err
    if table.shape[1] != 2:
        raise BerCurveError(f"{path}: expected two columns snr_db,ber")
    logger.info("loaded BER curve %s with %d points", path, table.shape[0])
    return BerCurve(table[:, 0].copy(), table[:, 1].copy(), name=str(path))


def ber_lookup(curve: BerCurve, snr_linear):
    """
    Bit error probability at linear SNR ``snr_linear`` (scalar or array).

    Table curves: 0.5 below the first point, log-linear interpolation inside, extrapolation of the
    last slope above. The result always lies in [1e-12, 0.5].
    """
    snr = np.asarray(snr_linear, dtype=float)
    if np.any(snr < 0):
        raise ValueError("snr must be >= 0")
    if curve.analytic:
        ber = 0.5 * erfc(np.sqrt(snr))
    else:
        with np.errstate(divide="ignore"):
            snr_db = 10.0 * np.log10(snr)
        log_ber = np.log10(curve.ber)
        inside = np.interp(snr_db, curve.snr_db, log_ber)
        slope = (log_ber[-1] - log_ber[-2]) / (curve.snr_db[-1] - curve.snr_db[-2])
        above = log_ber[-1] + slope * (snr_db - curve.snr_db[-1])
        ber = np.where(
            snr_db < curve.snr_db[0],
            BER_CAP,
            10.0 ** np.where(snr_db > curve.snr_db[-1], above, inside),
        )
    ber = np.clip(ber, BER_FLOOR, BER_CAP)
    return float(ber) if ber.ndim == 0 else ber


class PacketDecision(NamedTuple):
    delivered: bool
    first_bad_bit: int | None = None


def decide_packet(
    tx: ActiveTransmission,
    sinr: np.ndarray,
    pulse: PulseParams,
    curve: BerCurve,
    stream,
) -> PacketDecision:
    """
    Bit-by-bit capture decision.

    The effective SNR of a bit is the sum of the SINR of its N_s frames; each bit flips with the BER
    of that SNR and the packet is delivered only if no bit flips.
    """
    bits = tx.packet.bits
    frames = bits * pulse.n_s
    if sinr.size < frames:
        raise ValueError(f"SINR vector covers {sinr.size} frames, packet needs {frames}")
    effective = sinr[:frames].reshape(bits, pulse.n_s).sum(axis=1)
    flips = stream.random(bits) < ber_lookup(curve, effective)
    if flips.any():
        return PacketDecision(False, int(np.argmax(flips)))
    return PacketDecision(True)


# Receiver ----------------------------------------------------------------------------------------


class RxState(enum.Enum):
    LOCKED = "locked"
    INTERFERENCE = "ignored-as-interference"
    BELOW_SENSITIVITY = "below-sensitivity"


class UwbReceiver:
    """
    Per-node reception state.

    Keeps every visible transmission on air at this node. An idle, non-transmitting receiver locks on
    an arrival at or above the RX threshold; every other visible transmission overlapping the locked
    one becomes a row of its interference matrix. Transmitting while locked aborts the reception.
    """

    def __init__(self, node_id: int, radio, pulse: PulseParams, curve: BerCurve, noise: float, stream):
        self.node_id = node_id
        self.pulse = pulse
        self.curve = curve
        self.noise = noise
        self.stream = stream
        self.sensitivity_w = dbm_to_watts(radio.sensitivity)
        self.threshold_w = dbm_to_watts(radio.rx_threshold)
        self.active: dict[int, ActiveTransmission] = {}
        self.locked: ActiveTransmission | None = None
        self.interferers: dict[int, ActiveTransmission] = {}
        self.aborted = False
        self.transmitting = False

    @property
    def busy(self) -> bool:
        return self.locked is not None

    def sensed_power(self) -> float:
        return sum(tx.power for tx in self.active.values())

    def on_arrival(self, arrival: ActiveTransmission) -> RxState:
        if arrival.power < self.sensitivity_w:
            return RxState.BELOW_SENSITIVITY
        self.active[arrival.tx_id] = arrival
        if self.locked is None and not self.transmitting and arrival.power >= self.threshold_w:
            self.locked = arrival
            self.interferers = {k: v for k, v in self.active.items() if k != arrival.tx_id}
            self.aborted = False
            return RxState.LOCKED
        if self.locked is not None:
            self.interferers[arrival.tx_id] = arrival
        return RxState.INTERFERENCE

    def abort(self) -> None:
        if self.locked is not None:
            self.aborted = True

    def on_end(self, tx: ActiveTransmission) -> PacketDecision | None:
        """Close one arrival; returns the capture decision when it was the locked one."""
        self.active.pop(tx.tx_id, None)
        if self.locked is not tx:
            return None
        self.locked = None
        others = list(self.interferers.values())
        self.interferers = {}
        if self.aborted:
            return PacketDecision(False, 0)
        decision = self.decide(tx, others)
        if not decision.delivered:
            logger.debug(
                "node %d: tx %d from %d corrupted at bit %s with %d interferers",
                self.node_id, tx.tx_id, tx.source, decision.first_bad_bit, len(others),
            )
        return decision

    def decide(self, tx: ActiveTransmission, others: list[ActiveTransmission]) -> PacketDecision:
        matrix = build_interference_matrix(tx, others, self.pulse)
        sinr = sinr_vector(matrix, [row.power for row in matrix.rows], self.noise)
        return decide_packet(tx, sinr, self.pulse, self.curve, self.bit_stream(tx))

    def bit_stream(self, tx: ActiveTransmission):
        """Bit-error draws of one reception, keyed by its sender and start time."""
        return self.stream.fork(to_ps(tx.t_start), tx.source)


def receiver_state_machine(receiver: UwbReceiver, arrival: ActiveTransmission) -> RxState:
    return receiver.on_arrival(arrival)
