"""On-disk text formats: checkpoints, Fisher files, CSV result tables.

Checkpoints are single JSON documents holding the architecture and the flat
parameter vector. Floats are written with Python's shortest round-trip
decimal encoding, so load(save(x)) reproduces every value bit for bit and
rewriting a loaded file is byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile

import numpy as np

from .fisher import DiagonalFisher
from .net import NetworkSpec, ParamVec

NETWORK_FORMAT = "dense-net-checkpoint"
FISHER_FORMAT = "diag-fisher"


class MissingArtifactError(FileNotFoundError):
    """A required checkpoint or results file is absent."""


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def _spec_fields(spec: NetworkSpec) -> dict:
    return {"layer_dims": list(spec.layer_dims), "activation": spec.activation}


def _spec_from(doc: dict) -> NetworkSpec:
    return NetworkSpec(tuple(doc["layer_dims"]), doc["activation"])


def save_network(path: str, params: ParamVec, provenance: dict | None = None) -> None:
    doc = {"format": NETWORK_FORMAT, **_spec_fields(params.spec),
           "values": [float(x) for x in params.values]}
    if provenance is not None:
        doc["provenance"] = provenance
    atomic_write_text(path, _dumps(doc))


def load_network(path: str):
    """Returns (ParamVec, provenance dict or None)."""
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != NETWORK_FORMAT:
        raise ValueError(f"{path} is not a network checkpoint")
    params = ParamVec(_spec_from(doc), np.array(doc["values"], dtype=np.float64))
    return params, doc.get("provenance")


def save_diag_fisher(path: str, fisher: DiagonalFisher) -> None:
    doc = {"format": FISHER_FORMAT, **_spec_fields(fisher.spec),
           "values": [float(x) for x in fisher.values],
           "probe_size": int(fisher.probe_size)}
    atomic_write_text(path, _dumps(doc))


def load_diag_fisher(path: str) -> DiagonalFisher:
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != FISHER_FORMAT:
        raise ValueError(f"{path} is not a Fisher file")
    return DiagonalFisher(_spec_from(doc), np.array(doc["values"], dtype=np.float64),
                          int(doc["probe_size"]))


def probe_sha256(inputs: np.ndarray) -> str:
    """Content hash of a probe/input matrix, used in coded-model provenance."""
    arr = np.ascontiguousarray(np.asarray(inputs, dtype=np.float64))
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def config_sha256(resolved: dict) -> str:
    """Hash of a resolved configuration document (order-insensitive)."""
    return hashlib.sha256(
        json.dumps(resolved, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]


def format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def append_csv(path: str, header: list, rows: list) -> None:
    """Append rows to a CSV table, creating it with the header if needed.

    The whole file is rewritten through a temp file so appends are atomic.
    """
    existing = ""
    if os.path.exists(path):
        with open(path) as fh:
            existing = fh.read()
        first = existing.splitlines()[0] if existing else ""
        if first != ",".join(header):
            raise ValueError(f"{path} has a different header; refusing to append")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if not existing:
        writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    atomic_write_text(path, existing + buf.getvalue())


def read_csv(path: str):
    """Returns (header, rows) with all cells as strings."""
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], rows[1:]
