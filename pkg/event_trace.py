"""
HDF5 event trace. One group per run holds the processed events and the hop path of every message
that reached its destination.
"""

from pathlib import Path

import h5py
import hdf5plugin
import numpy as np

from sim_core import EventKind

KINDS = [kind.value for kind in EventKind]


def _dataset(group, name, data):
    # the Blosc filter needs chunked storage, which an empty dataset cannot have
    if data.size:
        compression = hdf5plugin.Blosc(cname="blosclz", clevel=9, shuffle=hdf5plugin.Blosc.SHUFFLE)
        return group.create_dataset(name, data=data, compression=compression)
    return group.create_dataset(name, data=data)


def write_trace(path, runs):
    """
    Store event traces.

    Parameters
    ----------
    path : str or Path
        Output file, overwritten.
    runs : list of (name, events, hops)
        ``events`` is a list of (time, sequence, kind, node) tuples as collected by the engine and
        ``hops`` maps message id to the list of nodes it visited.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with h5py.File(path, "w") as f:
        f.attrs["kinds"] = KINDS
        for name, events, hops in runs:
            group = f.create_group(name)
            _dataset(group, "time", np.array([e[0] for e in events], dtype="float64"))
            _dataset(group, "sequence", np.array([e[1] for e in events], dtype="int64"))
            _dataset(group, "kind", np.array([KINDS.index(e[2]) for e in events], dtype="uint8"))
            _dataset(group, "node", np.array([e[3] for e in events], dtype="int32"))
            ids = sorted(hops)
            lengths = np.array([len(hops[i]) for i in ids], dtype="int64")
            _dataset(group, "hop_message", np.array(ids, dtype="int64"))
            _dataset(group, "hop_offset", np.concatenate([[0], np.cumsum(lengths)]).astype("int64"))
            _dataset(group, "hop_node", np.array([n for i in ids for n in hops[i]], dtype="int32"))


def read_trace(path):
    """Inverse of ``write_trace``: {run name: (events, hops)}."""
    runs = {}
    with h5py.File(path, "r") as f:
        kinds = [k.decode() if isinstance(k, bytes) else str(k) for k in f.attrs["kinds"]]
        for name, group in f.items():
            events = list(
                zip(
                    group["time"][()].tolist(),
                    group["sequence"][()].tolist(),
                    [kinds[k] for k in group["kind"][()]],
                    group["node"][()].tolist(),
                )
            )
            offsets = group["hop_offset"][()]
            nodes = group["hop_node"][()]
            hops = {
                int(m): nodes[offsets[i]: offsets[i + 1]].tolist()
                for i, m in enumerate(group["hop_message"][()])
            }
            runs[name] = (events, hops)
    return runs
