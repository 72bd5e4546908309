"""
Built-in scenarios. Each preset is a settings dictionary rendered to the scenario text format and
parsed like a file, so presets go through the same validation.

scenario1: a base station with four routers on the axes at 15 m and four CBR sources 5 m beyond
them, static routes source -> router -> base.
scenario2: 60 sensors on a 25 m grid around a central base station in a 200 x 200 m field, AODV
routing, two walking intruders (one authorized) and five CBR flows towards the base.
"""

import numpy as np

ANTENNA_Z = 0.45


def _scenario1():
    center = np.array([50.0, 50.0])
    axes = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    nodes = {0: {"role": "base-station", "position": (*center, ANTENNA_Z)}}
    flows, routes = {}, []
    for k, axis in enumerate(axes):
        router, source = 1 + k, 5 + k
        nodes[router] = {"role": "router", "position": (*(center + 15.0 * axis), ANTENNA_Z)}
        nodes[source] = {"role": "sensor", "position": (*(center + 20.0 * axis), ANTENNA_Z)}
        flows[f"src{source}"] = (source, 0, 40.0, 512)
        routes += [(source, 0, router), (router, 0, 0)]
    return {
        "scenario": {"name": "scenario1", "area": (100.0, 100.0), "duration": 10.0, "seeds": tuple(range(1, 11))},
        "radio": {"family": "uwb"},
        "mac": {"variant": "unslotted", "max_retx": 4},
        "channel": {"variant": "free-space"},
        "routing": {"mode": "static"},
        "nodes": nodes,
        "flows": flows,
        "routes": routes,
    }


def _scenario1_csma():
    settings = _scenario1()
    settings["scenario"]["name"] = "scenario1-csma"
    settings["radio"] = {"family": "oqpsk"}
    settings["mac"] = {"variant": "csma-ca", "max_retx": 0}
    return settings


def _scenario2():
    spacing, cells = 25.0, 8
    grid = spacing / 2 + spacing * np.arange(cells)
    center_cells = {cells // 2 - 1, cells // 2}
    nodes = {0: {"role": "base-station", "position": (100.0, 100.0, ANTENNA_Z)}}
    node_id = 1
    for i, x in enumerate(grid):
        for j, y in enumerate(grid):
            if i in center_cells and j in center_cells:
                continue
            nodes[node_id] = {"role": "sensor", "position": (float(x), float(y), ANTENNA_Z)}
            node_id += 1
    authorized, unauthorized = node_id, node_id + 1
    nodes[authorized] = {
        "role": "intruder-authorized",
        "position": (5.0, 30.0, ANTENNA_Z),
        "path": ((195.0, 30.0), (195.0, 170.0), (5.0, 170.0)),
        "speed": 1.5,
    }
    nodes[unauthorized] = {
        "role": "intruder-unauthorized",
        "position": (30.0, 195.0, ANTENNA_Z),
        "path": ((30.0, 5.0), (170.0, 5.0), (170.0, 195.0)),
        "speed": 1.5,
    }
    # one flow from each corner and one from the middle of the west edge
    sources = [1, 8, 53, 60, 4]
    flows = {f"cbr{n}": (n, 0, 1.0, 512) for n in sources}
    return {
        "scenario": {"name": "scenario2", "area": (200.0, 200.0), "duration": 100.0, "seeds": tuple(range(1, 11))},
        "radio": {"family": "uwb"},
        "mac": {"variant": "unslotted", "max_retx": 4},
        "channel": {"variant": "free-space"},
        "routing": {"mode": "aodv", "lifetime": 5.0},
        # under half the grid spacing, so a beacon is sensed by one sensor at most
        "sensing": {"enabled": True, "reliability": 0.95, "sensing_range": 12.0},
        "app": {"base_station": 0, "hold_off": 1.0, "auth_timeout": 0.5},
        "nodes": nodes,
        "flows": flows,
        "routes": [],
    }


def get_presets():
    """
    Returns the built-in scenario settings.
    Add a function above and an entry here to define a new preset.
    """
    return {
        "scenario1": _scenario1(),
        "scenario1-csma": _scenario1_csma(),
        "scenario2": _scenario2(),
    }


PRESETS = get_presets()


def _text(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return " ".join(_text(v) for v in value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def render_settings(settings: dict) -> str:
    """Scenario text of a settings dictionary."""
    lines = []
    for section in ("scenario", "radio", "pulse", "mac", "channel", "routing", "sensing", "app", "curve"):
        for key, value in settings.get(section, {}).items():
            lines.append(f"{section}.{key} = {_text(value)}")
    for node_id, node in settings.get("nodes", {}).items():
        lines.append(f"node.{node_id} = {node['role']} {_text(node['position'])}")
        if node.get("path"):
            lines.append(f"node.{node_id}.path = " + " ".join(f"{_text(x)},{_text(y)}" for x, y in node["path"]))
        if node.get("speed"):
            lines.append(f"node.{node_id}.speed = {_text(node['speed'])}")
    for name, flow in settings.get("flows", {}).items():
        lines.append(f"flow.{name} = {_text(flow)}")
    for node, dest, hop in settings.get("routes", []):
        lines.append(f"route {node} {dest} {hop}")
    return "\n".join(lines) + "\n"
