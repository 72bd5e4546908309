"""
Narrowband OQPSK physical layer used by the CSMA/CA baseline.

There is no chip structure: every overlapping transmission adds its full power to the interference
of the locked one. The reception interval is cut into segments at each interferer arrival and
departure; each bit takes the SINR of the segment holding its midpoint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from phy_uwb import ActiveTransmission, BerCurve, PacketDecision, UwbReceiver, ber_lookup

logger = logging.getLogger(__name__)

OQPSK_BIT_RATE = 250e3  # bit/s


@dataclass
class NarrowbandReception:
    locked: ActiveTransmission
    interferers: list[ActiveTransmission] = field(default_factory=list)
    noise: float = 0.0


def segment_edges(reception: NarrowbandReception) -> np.ndarray:
    """Sorted segment boundaries (receiver time) from the locked arrival to its departure."""
    start, end = reception.locked.arrival, reception.locked.departure
    cuts = {start, end}
    for tx in reception.interferers:
        for t in (tx.arrival, tx.departure):
            if start < t < end:
                cuts.add(t)
    return np.array(sorted(cuts))


def narrowband_sinr(reception: NarrowbandReception) -> tuple[np.ndarray, np.ndarray]:
    """
    Piecewise-constant SINR of the locked transmission.

    Returns
    -------
    edges : np.ndarray
        Segment boundaries, one more than the number of segments.
    sinr : np.ndarray
        P_1 / (noise + sum of the powers of every interferer on air during the segment).
    """
    power = reception.locked.power
    if power <= 0:
        raise ValueError("narrowband_sinr needs a positive locked power")
    edges = segment_edges(reception)
    interference = np.zeros(edges.size - 1)
    for tx in reception.interferers:
        overlaps = (tx.arrival < edges[1:]) & (tx.departure > edges[:-1])
        interference += np.where(overlaps, tx.power, 0.0)
    return edges, power / (reception.noise + interference)


def decide_packet_nb(
    reception: NarrowbandReception,
    curve: BerCurve,
    bit_rate: float,
    stream,
) -> PacketDecision:
    """Per-bit Bernoulli decision; each bit sees the SINR of the segment containing its midpoint."""
    edges, sinr = narrowband_sinr(reception)
    bits = reception.locked.packet.bits
    midpoints = reception.locked.arrival + (np.arange(bits) + 0.5) / bit_rate
    segment = np.clip(np.searchsorted(edges, midpoints, side="right") - 1, 0, sinr.size - 1)
    flips = stream.random(bits) < ber_lookup(curve, sinr[segment])
    if flips.any():
        return PacketDecision(False, int(np.argmax(flips)))
    return PacketDecision(True)


class NarrowbandReceiver(UwbReceiver):
    """Same lock and half-duplex behaviour as the UWB receiver, additive-power capture decision."""

    def __init__(self, node_id: int, radio, curve: BerCurve, noise: float, stream):
        super().__init__(node_id, radio, None, curve, noise, stream)
        self.bit_rate = radio.throughput

    def decide(self, tx: ActiveTransmission, others: list[ActiveTransmission]) -> PacketDecision:
        reception = NarrowbandReception(tx, others, self.noise)
        return decide_packet_nb(reception, self.curve, self.bit_rate, self.bit_stream(tx))
