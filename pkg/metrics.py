"""
Counters and records collected during a run, and the performance metrics computed from them:
packet delivery ratio, end-to-end delay, detection/authentication rate and detection latency.
"""

from __future__ import annotations

import copy
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

CSV_COLUMNS = [
    "seed",
    "scenario",
    "mac",
    "retx",
    "load_pps",
    "pdr",
    "avg_delay_s",
    "detection_rate",
    "auth_rate",
    "mean_detection_latency_s",
    "p95_detection_latency_s",
    # extras
    "beacons_emitted",
    "beacons_in_range",
    "beacon_detection_rate",
    "event_detection_rate",
    "mean_auth_latency_s",
]


@dataclass
class Metrics:
    """
    Raw records of one run. All metric functions below are pure post-processing of these records.

    ``sent`` and ``received`` are keyed by (flow name, application sequence number). Detection reports
    are keyed by the id of the sensing event they notify; several sensors may notify the same beacon.
    """

    duration: float = 0.0
    sent: dict[tuple[str, int], tuple[int, float]] = field(default_factory=dict)
    received: dict[tuple[str, int], float] = field(default_factory=dict)
    beacons_emitted: int = 0
    beacons_in_range: int = 0
    sensing_outcomes: Counter = field(default_factory=Counter)
    detect_sent: int = 0
    detect_suppressed: int = 0
    detect_received: dict[int, tuple[int, float, float]] = field(default_factory=dict)
    auth_req_sent: int = 0
    auth_resp_sent: int = 0
    auth_notify_received: dict[int, float] = field(default_factory=dict)
    auth_latencies: list[float] = field(default_factory=list)
    counters: Counter = field(default_factory=Counter)
    hops: dict[int, list[int]] = field(default_factory=dict)

    # recording
    def record_sent(self, flow: str, seq: int, bits: int, t: float) -> None:
        self.sent[(flow, seq)] = (bits, t)

    def record_received(self, flow: str, seq: int, t: float) -> None:
        # duplicates are suppressed at the MAC; keep the first arrival regardless
        self.received.setdefault((flow, seq), t)

    def record_detect(self, event_id: int, beacon_id: int, emitted_at: float, t: float) -> None:
        self.detect_received.setdefault(event_id, (beacon_id, emitted_at, t))

    def record_auth_notify(self, request_id: int, t: float) -> None:
        self.auth_notify_received.setdefault(request_id, t)

    def record_auth_latency(self, requested_at: float, t: float) -> None:
        self.auth_latencies.append(t - requested_at)

    @property
    def sensing_events(self) -> int:
        return sum(self.sensing_outcomes.values())

    @property
    def detected_events(self) -> int:
        return self.sensing_outcomes["detected"]

    def snapshot(self) -> Metrics:
        return copy.deepcopy(self)


def _flow_keys(m: Metrics, flow: str | None):
    return [k for k in m.sent if flow is None or k[0] == flow]


def packet_delivery_ratio(m: Metrics, flow: str | None = None) -> float | None:
    """
    Received application bytes over sent application bytes.

    Parameters
    ----------
    m : Metrics
        Run records.
    flow : str, optional
        Restrict to one flow; aggregate over all flows when omitted.

    Returns
    -------
    float | None
        Ratio in [0, 1], or None when nothing was sent.
    """
    keys = _flow_keys(m, flow)
    sent_bits = sum(m.sent[k][0] for k in keys)
    if sent_bits == 0:
        return None
    received_bits = sum(m.sent[k][0] for k in keys if k in m.received)
    return received_bits / sent_bits


def end_to_end_delays(m: Metrics, flow: str | None = None) -> np.ndarray:
    keys = [k for k in _flow_keys(m, flow) if k in m.received]
    return np.array([m.received[k] - m.sent[k][1] for k in keys], dtype=float)


def avg_end_to_end_delay(m: Metrics, flow: str | None = None) -> float | None:
    """Mean generation-to-reception delay over delivered packets only; None if none delivered."""
    delays = end_to_end_delays(m, flow)
    if delays.size == 0:
        return None
    return float(np.mean(delays))


def notified_beacons(m: Metrics) -> set[int]:
    return {beacon for beacon, _, _ in m.detect_received.values()}


def detection_rate(m: Metrics) -> float | None:
    """
    Beacons notified at the base over beacons emitted with at least one sensor in sensing range.

    A beacon reported by several sensors counts once.
    """
    if m.beacons_in_range == 0:
        return None
    return len(notified_beacons(m)) / m.beacons_in_range


def beacon_detection_rate(m: Metrics) -> float | None:
    """Beacons notified at the base over every beacon emitted, in range of a sensor or not."""
    if m.beacons_emitted == 0:
        return None
    return len(notified_beacons(m)) / m.beacons_emitted


def event_detection_rate(m: Metrics) -> float | None:
    """DETECT reports received at the base over (beacon, sensor) sensing events."""
    if m.sensing_events == 0:
        return None
    return len(m.detect_received) / m.sensing_events


def authentication_rate(m: Metrics) -> float | None:
    """AUTH_NOTIFY received at the base over AUTH_REQ sent."""
    if m.auth_req_sent == 0:
        return None
    return len(m.auth_notify_received) / m.auth_req_sent


def detection_latency(m: Metrics) -> list[float]:
    """Per report: base reception time minus beacon emission time."""
    return [t_rx - emitted for _, emitted, t_rx in m.detect_received.values()]


def summary(m: Metrics) -> dict[str, float | None]:
    latencies = np.asarray(detection_latency(m), dtype=float)
    return {
        "pdr": packet_delivery_ratio(m),
        "avg_delay_s": avg_end_to_end_delay(m),
        "detection_rate": detection_rate(m),
        "beacon_detection_rate": beacon_detection_rate(m),
        "auth_rate": authentication_rate(m),
        "mean_detection_latency_s": float(latencies.mean()) if latencies.size else None,
        "p95_detection_latency_s": float(np.percentile(latencies, 95)) if latencies.size else None,
        "beacons_emitted": m.beacons_emitted,
        "beacons_in_range": m.beacons_in_range,
        "event_detection_rate": event_detection_rate(m),
        "mean_auth_latency_s": float(np.mean(m.auth_latencies)) if m.auth_latencies else None,
    }


def format_value(value) -> str:
    """CSV cell text: empty for absent values, shortest round-trip repr for floats."""
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def csv_row(m: Metrics, seed: int, scenario: str, mac: str, retx: int, load_pps: float | None) -> list[str]:
    values = summary(m)
    row = {
        "seed": seed,
        "scenario": scenario,
        "mac": mac,
        "retx": retx,
        "load_pps": None if load_pps is None else float(load_pps),
        **{k: values[k] for k in CSV_COLUMNS[5:]},
    }
    return [format_value(row[c]) for c in CSV_COLUMNS]
