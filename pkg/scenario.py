"""
Scenario definition: the types of one simulated setup, and its line-oriented text format.

    # comment
    section.key = value
    node.<id> = <role> <x> <y> <z>
    node.<id>.path = x,y x,y ...
    node.<id>.speed = <m/s>
    flow.<name> = <src> <dst> <rate_pps> [payload_bits [start [stop]]]
    route <node> <destination> <next_hop>

Radio keys override the reference values of the chosen ``radio.family``. Unknown keys are
rejected with their line number.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable

from apps import AppConfig, CbrFlow
from channel import ChannelModel, ChannelVariant, RadioParams
from mac import MacConfig, MacVariant
from phy_uwb import BerCurve, BerCurveError, PulseParams, load_ber_curve
from routing import AodvConfig
from sensing import SensingParams
from sim_core import NodeState, Role

logger = logging.getLogger(__name__)


class ScenarioError(ValueError):
    """Invalid scenario text; carries the offending line number and/or field name."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(field)
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass
class Scenario:
    name: str = "custom"
    area: tuple[float, float] = (100.0, 100.0)
    duration: float = 20.0
    seeds: tuple[int, ...] = (1,)
    radio: RadioParams = field(default_factory=RadioParams.uwb)
    pulse: PulseParams = field(default_factory=PulseParams)
    mac: MacConfig = field(default_factory=MacConfig)
    channel: ChannelModel = field(default_factory=ChannelModel)
    routing: str = "static"
    aodv: AodvConfig = field(default_factory=AodvConfig)
    routes: dict[int, dict[int, int]] = field(default_factory=dict)
    sensing: SensingParams | None = None
    app: AppConfig = field(default_factory=AppConfig)
    flows: list[CbrFlow] = field(default_factory=list)
    nodes: list[NodeState] = field(default_factory=list)
    curve_file: str | None = None
    curve: BerCurve = field(default_factory=BerCurve)

    def node(self, node_id: int) -> NodeState:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    def with_mac(self, **changes) -> Scenario:
        return replace(self, mac=replace(self.mac, **changes))

    def with_flow_rate(self, rate: float) -> Scenario:
        return replace(self, flows=[replace(f, rate=rate) for f in self.flows])


# Value converters --------------------------------------------------------------------------------


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, enum.Enum):
        return value.value
    return str(value)


# section -> key -> converter
SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "scenario": {"name": str, "area": _floats, "duration": float, "seeds": _ints},
    "radio": {
        "family": str,
        "bandwidth": float,
        "carrier_frequency": float,
        "throughput": float,
        "antenna_height": float,
        "antenna_gain": float,
        "noise_figure": float,
        "temperature": float,
        "sensitivity": float,
        "rx_threshold": float,
        "tx_power": float,
    },
    "pulse": {
        "chip_duration": float,
        "chips_per_frame": int,
        "pulses_per_symbol": int,
        "ths_period": int,
        "frame_duration": float,
    },
    "mac": {
        "variant": MacVariant,
        "max_retx": int,
        "ack_timeout": float,
        "backoff_window": int,
        "ack_bits": int,
        "header_bits": int,
        "slot_duration": float,
        "queue_limit": int,
        "min_be": int,
        "max_be": int,
        "max_csma_backoffs": int,
        "unit_backoff": float,
        "cca_duration": float,
        "turnaround": float,
    },
    "channel": {"variant": ChannelVariant, "k_factor": float, "path_loss": ChannelVariant},
    "routing": {
        "mode": str,
        "lifetime": float,
        "node_traversal_time": float,
        "net_diameter": int,
        "rreq_retries": int,
        "buffer_limit": int,
        "jitter": float,
    },
    "sensing": {
        "enabled": _bool,
        "sampling_rate": float,
        "sensitivity_threshold": float,
        "detection_threshold": float,
        "reliability": float,
        "mid_band_probability": float,
        "sensing_tx_power": float,
        "sensing_range": float,
        "k_factor": float,
        "fading": _bool,
        "frequency": float,
    },
    "app": {"base_station": int, "hold_off": float, "auth_timeout": float, "report_bits": int},
    "curve": {"file": str},
}


@dataclass
class _Entry:
    value: Any
    line: int


# Parsing -----------------------------------------------------------------------------------------


def _tokenize(text: str):
    """Yield (line number, key, value) for assignments and (line number, 'route', args) for routes."""
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("route ") or line == "route":
            args = line.split()[1:]
            if len(args) != 3:
                raise ScenarioError("route needs <node> <destination> <next_hop>", line=number)
            yield number, "route", args
            continue
        if "=" not in line:
            raise ScenarioError(f"expected 'section.key = value', got {line!r}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or "." not in key:
            raise ScenarioError(f"malformed key {key!r}", line=number)
        yield number, key, value


def _parse_node(node_id: int, value: str, line: int) -> dict:
    parts = value.split()
    if len(parts) != 4:
        raise ScenarioError("node needs <role> <x> <y> <z>", line=line, field=f"node.{node_id}")
    try:
        role = Role(parts[0])
        position = tuple(float(p) for p in parts[1:])
    except ValueError as err:
        raise ScenarioError(str(err), line=line, field=f"node.{node_id}") from err
    return {"role": role, "position": position, "line": line}


def _parse_flow(name: str, value: str, line: int) -> CbrFlow:
    parts = value.split()
    if not 3 <= len(parts) <= 6:
        raise ScenarioError(
            "flow needs <src> <dst> <rate_pps> [payload_bits [start [stop]]]", line=line, field=f"flow.{name}"
        )
    try:
        src, dst = int(parts[0]), int(parts[1])
        values = dict(rate=float(parts[2]))
        if len(parts) > 3:
            values["payload_bits"] = int(parts[3])
        if len(parts) > 4:
            values["start"] = float(parts[4])
        if len(parts) > 5:
            values["stop"] = float(parts[5])
        return CbrFlow(name, src, dst, **values)
    except ValueError as err:
        raise ScenarioError(str(err), line=line, field=f"flow.{name}") from err


def parse_scenario_text(text: str, name: str | None = None, base_dir: Path | None = None) -> Scenario:
    """
    Parse and validate scenario text.

    Raises
    ------
    ScenarioError
        On syntax errors (with line number) and invariant violations (with field name).
    """
    sections: dict[str, dict[str, _Entry]] = {s: {} for s in SCHEMA}
    nodes: dict[int, dict] = {}
    flows: list[CbrFlow] = []
    routes: dict[int, dict[int, int]] = {}

    for number, key, value in _tokenize(text):
        if key == "route":
            try:
                node, dest, hop = (int(v) for v in value)
            except ValueError as err:
                raise ScenarioError(str(err), line=number, field="route") from err
            routes.setdefault(node, {})[dest] = hop
            continue
        section, _, rest = key.partition(".")
        if section == "node":
            node_key, _, attr = rest.partition(".")
            try:
                node_id = int(node_key)
            except ValueError as err:
                raise ScenarioError(f"node id must be an integer: {node_key!r}", line=number) from err
            if not attr:
                if node_id in nodes and "role" in nodes[node_id]:
                    raise ScenarioError(f"duplicate node {node_id}", line=number, field=key)
                nodes.setdefault(node_id, {}).update(_parse_node(node_id, value, number))
            elif attr == "path":
                try:
                    path = tuple(tuple(float(c) for c in pt.split(",")) for pt in value.split())
                except ValueError as err:
                    raise ScenarioError(str(err), line=number, field=key) from err
                if any(len(pt) != 2 for pt in path):
                    raise ScenarioError("waypoints are x,y pairs", line=number, field=key)
                nodes.setdefault(node_id, {})["path"] = path
            elif attr == "speed":
                try:
                    nodes.setdefault(node_id, {})["speed"] = float(value)
                except ValueError as err:
                    raise ScenarioError(str(err), line=number, field=key) from err
            else:
                raise ScenarioError(f"unknown key {key!r}", line=number, field=key)
            continue
        if section == "flow":
            if not rest or any(f.name == rest for f in flows):
                raise ScenarioError(f"missing or duplicate flow name in {key!r}", line=number, field=key)
            flows.append(_parse_flow(rest, value, number))
            continue
        if section not in SCHEMA or rest not in SCHEMA[section]:
            raise ScenarioError(f"unknown key {key!r}", line=number, field=key)
        try:
            converted = SCHEMA[section][rest](value)
        except ValueError as err:
            raise ScenarioError(str(err), line=number, field=key) from err
        sections[section][rest] = _Entry(converted, number)

    return _build(sections, nodes, flows, routes, name, base_dir)


def _values(entries: dict[str, _Entry], rename: dict[str, str] | None = None) -> dict[str, Any]:
    rename = rename or {}
    return {rename.get(k, k): e.value for k, e in entries.items()}


def _section(name: str, build: Callable[[], Any]):
    try:
        return build()
    except (ValueError, TypeError) as err:
        if isinstance(err, ScenarioError):
            raise
        raise ScenarioError(str(err), field=name) from err


def _build(sections, nodes, flows, routes, name, base_dir) -> Scenario:
    top = _values(sections["scenario"])
    scenario = Scenario(name=top.get("name", name or "custom"))
    if "area" in top:
        if len(top["area"]) != 2 or min(top["area"]) <= 0:
            raise ScenarioError("area needs two positive sizes", field="scenario.area")
        scenario.area = tuple(top["area"])
    if "duration" in top:
        if top["duration"] <= 0:
            raise ScenarioError("duration must be positive", field="scenario.duration")
        scenario.duration = top["duration"]
    if "seeds" in top:
        if not top["seeds"]:
            raise ScenarioError("at least one seed", field="scenario.seeds")
        scenario.seeds = top["seeds"]

    radio = _values(sections["radio"])
    family = radio.pop("family", "uwb")
    if family not in ("uwb", "oqpsk"):
        raise ScenarioError(f"unknown radio family {family!r}", field="radio.family")
    scenario.radio = _section("radio", lambda: getattr(RadioParams, family)(**radio))

    pulse = _values(sections["pulse"])
    frame_duration = pulse.pop("frame_duration", None)

    def make_pulse():
        return PulseParams.from_seconds(
            pulse.get("chip_duration", PulseParams.chip_ps / 1e12),
            pulse.get("chips_per_frame", PulseParams.n_h),
            pulse.get("pulses_per_symbol", PulseParams.n_s),
            pulse.get("ths_period", PulseParams.ths_period),
            frame_duration=frame_duration,
        )

    scenario.pulse = _section("pulse", make_pulse)
    if family == "uwb":
        _section("pulse", lambda: scenario.pulse.check_throughput(scenario.radio.throughput))

    scenario.mac = _section("mac", lambda: MacConfig(**_values(sections["mac"])))
    if family == "oqpsk" and scenario.mac.variant is not MacVariant.CSMA_CA:
        raise ScenarioError("the OQPSK radio runs CSMA/CA only", field="mac.variant")
    if family == "uwb" and scenario.mac.variant is MacVariant.CSMA_CA:
        raise ScenarioError("CSMA/CA needs the OQPSK radio", field="mac.variant")
    scenario.channel = _section("channel", lambda: ChannelModel(**_values(sections["channel"])))

    routing = _values(sections["routing"], {"lifetime": "active_route_timeout"})
    scenario.routing = routing.pop("mode", "static")
    if scenario.routing not in ("static", "aodv"):
        raise ScenarioError(f"unknown routing mode {scenario.routing!r}", field="routing.mode")
    scenario.aodv = _section("routing", lambda: AodvConfig(**routing))

    sensing = _values(sections["sensing"])
    if sensing.pop("enabled", bool(sensing)):
        scenario.sensing = _section("sensing", lambda: SensingParams(**sensing))

    built_nodes = []
    for node_id in sorted(nodes):
        spec = nodes[node_id]
        if "role" not in spec:
            raise ScenarioError("path/speed given for an undeclared node", field=f"node.{node_id}")
        built_nodes.append(
            _section(
                f"node.{node_id}",
                lambda: NodeState(
                    node_id, spec["position"], spec["role"], spec.get("path", ()), spec.get("speed", 0.0)
                ),
            )
        )
    scenario.nodes = built_nodes
    ids = {n.id for n in built_nodes}

    app = _values(sections["app"])
    if "base_station" not in app:
        bases = [n.id for n in built_nodes if n.role is Role.BASE_STATION]
        app["base_station"] = bases[0] if bases else 0
    scenario.app = _section("app", lambda: AppConfig(**app))
    if scenario.sensing is not None and scenario.app.base_station not in ids:
        raise ScenarioError("base station is not a declared node", field="app.base_station")

    for flow in flows:
        if flow.source not in ids or flow.destination not in ids:
            raise ScenarioError("flow endpoints must be declared nodes", field=f"flow.{flow.name}")
    scenario.flows = flows
    for node, table in routes.items():
        if node not in ids or any(d not in ids or h not in ids for d, h in table.items()):
            raise ScenarioError(f"route entries of node {node} reference undeclared nodes", field="route")
    scenario.routes = routes

    if "file" in sections["curve"]:
        path = Path(sections["curve"]["file"].value)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        scenario.curve_file = sections["curve"]["file"].value
        try:
            scenario.curve = load_ber_curve(path)
        except BerCurveError as err:
            raise ScenarioError(str(err), line=sections["curve"]["file"].line, field="curve.file") from err
    return scenario


def parse_scenario(source: str | Path) -> Scenario:
    """
    Load a built-in preset by name or a scenario file by path.
    """
    from scenario_presets import PRESETS, render_settings

    if isinstance(source, str) and source in PRESETS:
        return parse_scenario_text(render_settings(PRESETS[source]), name=source)
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as err:
        raise ScenarioError(f"cannot read scenario {path}: {err}") from err
    logger.info("parsing scenario file %s", path)
    return parse_scenario_text(text, name=path.stem, base_dir=path.parent)


# Serialization -----------------------------------------------------------------------------------


def _dataclass_lines(section: str, obj, rename: dict[str, str] | None = None, skip=()) -> list[str]:
    rename = rename or {}
    lines = []
    for f in fields(obj):
        if f.name in skip:
            continue
        value = getattr(obj, f.name)
        if value is None:
            continue
        lines.append(f"{section}.{rename.get(f.name, f.name)} = {_fmt(value)}")
    return lines


def serialize_scenario(scenario: Scenario) -> str:
    """Text form of ``scenario``; parsing it back gives an equivalent Scenario."""
    lines = [
        f"scenario.name = {scenario.name}",
        f"scenario.area = {_fmt(float(scenario.area[0]))} {_fmt(float(scenario.area[1]))}",
        f"scenario.duration = {_fmt(float(scenario.duration))}",
        f"scenario.seeds = {' '.join(str(s) for s in scenario.seeds)}",
    ]
    lines += _dataclass_lines("radio", scenario.radio)
    pulse = scenario.pulse
    lines += [
        f"pulse.chip_duration = {_fmt(pulse.chip_duration)}",
        f"pulse.chips_per_frame = {pulse.n_h}",
        f"pulse.pulses_per_symbol = {pulse.n_s}",
        f"pulse.ths_period = {pulse.ths_period}",
    ]
    lines += _dataclass_lines("mac", scenario.mac)
    lines += _dataclass_lines("channel", scenario.channel)
    lines.append(f"routing.mode = {scenario.routing}")
    lines += _dataclass_lines("routing", scenario.aodv, {"active_route_timeout": "lifetime"})
    if scenario.sensing is not None:
        lines.append("sensing.enabled = true")
        lines += _dataclass_lines("sensing", scenario.sensing)
    lines += _dataclass_lines("app", scenario.app)
    if scenario.curve_file is not None:
        lines.append(f"curve.file = {scenario.curve_file}")
    for node in scenario.nodes:
        x, y, z = node.position
        lines.append(f"node.{node.id} = {node.role.value} {_fmt(float(x))} {_fmt(float(y))} {_fmt(float(z))}")
        if node.path:
            lines.append(f"node.{node.id}.path = " + " ".join(f"{_fmt(float(px))},{_fmt(float(py))}" for px, py in node.path))
        if node.speed:
            lines.append(f"node.{node.id}.speed = {_fmt(float(node.speed))}")
    for flow in scenario.flows:
        stop = "" if math.isinf(flow.stop) else f" {_fmt(float(flow.stop))}"
        lines.append(
            f"flow.{flow.name} = {flow.source} {flow.destination} {_fmt(float(flow.rate))} "
            f"{flow.payload_bits} {_fmt(float(flow.start))}{stop}"
        )
    for node in sorted(scenario.routes):
        for dest, hop in sorted(scenario.routes[node].items()):
            lines.append(f"route {node} {dest} {hop}")
    return "\n".join(lines) + "\n"


def equivalent(a: Scenario, b: Scenario) -> bool:
    """Structural equality ignoring the loaded curve object."""
    return replace(a, curve=BerCurve()) == replace(b, curve=BerCurve()) and a.curve_file == b.curve_file

