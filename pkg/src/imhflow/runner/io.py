"""Artifact files.

``trace.csv``
    ``step,walker,x0..x{m-1},log_target,accepted,kernel_tag``; one row per
    recorded (step, walker). Step 0 rows hold the initial states with tag
    ``init``. Floats are written with 17 significant digits so they
    round-trip exactly.
``acceptance.csv``
    ``step,imh_proposed,imh_accepted,local_proposed,local_accepted`` for
    every sweep.
``events.jsonl``
    one JSON object per adaptation event.
``checkpoints/params_<step>.json``
    versioned proposal parameters (see :func:`imhflow.flows.params_to_dict`).
``manifest.json``
    row counts and SHA-256 digests of the files above; replay refuses
    traces that do not match.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from pathlib import Path

import numpy as np

from ..exceptions import TraceCorruptError

MANIFEST = "manifest.json"


def fmt(v) -> str:
    return format(float(v), ".17g")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_text(path, text: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def write_json(path, obj) -> None:
    write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def trace_header(dim: int) -> list:
    return ["step", "walker"] + [f"x{i}" for i in range(dim)] + ["log_target", "accepted", "kernel_tag"]


def write_trace(path, steps, walkers, x, logp, accepted, tags) -> int:
    """Write trace rows; returns the row count."""
    x = np.asarray(x, dtype=np.float64)
    dim = x.shape[1]
    buf = io.StringIO()
    buf.write(",".join(trace_header(dim)) + "\n")
    # format column-wise with numpy, then join rows
    cols = [np.char.mod("%d", np.asarray(steps)), np.char.mod("%d", np.asarray(walkers))]
    cols += [np.char.mod("%.17g", x[:, i]) for i in range(dim)]
    cols += [np.char.mod("%.17g", np.asarray(logp, dtype=np.float64)),
             np.char.mod("%d", np.asarray(accepted, dtype=np.int64)),
             np.asarray(tags, dtype=str)]
    for row in zip(*cols):
        buf.write(",".join(row) + "\n")
    write_text(path, buf.getvalue())
    return len(x)


def read_trace(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise TraceCorruptError(f"trace file {path} is missing")
    with open(path, newline="") as fh:
        text = fh.read()
    if not text.endswith("\n"):
        raise TraceCorruptError(f"trace file {path} is truncated (no final newline)")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise TraceCorruptError(f"trace file {path} is empty")
    header = rows[0]
    if header[:2] != ["step", "walker"] or header[-3:] != ["log_target", "accepted", "kernel_tag"]:
        raise TraceCorruptError(f"trace file {path} has an unexpected header")
    dim = len(header) - 5
    body = rows[1:]
    if any(len(r) != len(header) for r in body):
        bad = next(i for i, r in enumerate(body) if len(r) != len(header))
        raise TraceCorruptError(f"trace file {path}: row {bad + 1} has the wrong number of fields")
    try:
        if body:
            arr = np.array([r[:-1] for r in body], dtype=np.float64)
        else:
            arr = np.empty((0, len(header) - 1))
    except ValueError as exc:
        raise TraceCorruptError(f"trace file {path}: unparsable value ({exc})") from exc
    return {
        "step": arr[:, 0].astype(np.int64),
        "walker": arr[:, 1].astype(np.int64),
        "x": arr[:, 2:2 + dim],
        "log_target": arr[:, 2 + dim],
        "accepted": arr[:, 3 + dim].astype(bool),
        "kernel_tag": np.array([r[-1] for r in body], dtype=str),
        "dim": dim,
    }


def write_table(path, header, columns) -> int:
    """CSV with integer columns as ints and float columns at full precision."""
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    cols = []
    for c in columns:
        c = np.asarray(c)
        cols.append(np.char.mod("%d", c) if np.issubdtype(c.dtype, np.integer) or c.dtype == bool
                    else np.char.mod("%.17g", c.astype(np.float64)))
    n = len(cols[0]) if cols else 0
    for row in zip(*cols):
        buf.write(",".join(row) + "\n")
    write_text(path, buf.getvalue())
    return n


def read_table(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise TraceCorruptError(f"file {path} is missing")
    text = path.read_text()
    if not text.endswith("\n"):
        raise TraceCorruptError(f"file {path} is truncated")
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    if any(len(r) != len(header) for r in body):
        raise TraceCorruptError(f"file {path} has rows with the wrong number of fields")
    try:
        arr = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    except ValueError as exc:
        raise TraceCorruptError(f"file {path}: unparsable value ({exc})") from exc
    return {h: arr[:, i] for i, h in enumerate(header)}


def write_events(path, events) -> int:
    lines = [json.dumps(_jsonable(e), sort_keys=True) for e in events]
    write_text(path, "".join(line + "\n" for line in lines))
    return len(lines)


def read_events(path) -> list:
    out = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise TraceCorruptError(f"event log line {i + 1} is not valid JSON") from exc
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def write_manifest(out_dir, files: dict) -> None:
    """``files`` maps artifact file names to row counts."""
    out_dir = Path(out_dir)
    entries = {name: {"rows": rows, "sha256": sha256(out_dir / name)} for name, rows in sorted(files.items())}
    write_json(out_dir / MANIFEST, {"files": entries})


def verify_manifest(out_dir) -> dict:
    out_dir = Path(out_dir)
    path = out_dir / MANIFEST
    if not path.exists():
        raise TraceCorruptError(f"{out_dir} has no {MANIFEST}; not a run directory")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise TraceCorruptError(f"{MANIFEST} is not valid JSON") from exc
    for name, entry in manifest["files"].items():
        f = out_dir / name
        if not f.exists():
            raise TraceCorruptError(f"trace file {name} is missing")
        if sha256(f) != entry["sha256"]:
            raise TraceCorruptError(f"trace file {name} does not match its recorded digest (truncated or edited)")
    return manifest


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
