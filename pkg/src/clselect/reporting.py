"""Output helpers: atomic writes, run manifests and trace export."""

import hashlib
import json
import math
import os
import tempfile

import numpy as np

from . import __version__

SCHEMA_VERSION = 1


def atomic_write_text(path, text):
    """Write ``text`` to a temporary file next to ``path`` and rename it into place.

    Readers never observe a partially written file; an interrupted write leaves
    the previous content (or nothing) behind.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        # JSON has no infinities; keep them readable and round-trippable
        if math.isnan(v):
            return "NaN"
        if math.isinf(v):
            return "Infinity" if v > 0 else "-Infinity"
        return v
    return value


def dumps(document):
    return json.dumps(_jsonable(document), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, document):
    atomic_write_text(path, dumps(document))


def file_fingerprint(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def manifest(command, config, seed, fingerprint=None, outputs=()):
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": "clselect",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "data_fingerprint": fingerprint,
        "outputs": list(outputs),
    }


def trace_csv_text(trace):
    """One row per sweep: mask bitstring, objective, penalised objective and
    cumulative inclusion frequency of every component."""
    M = trace.M
    masks = trace.masks.astype(float)
    cum = np.cumsum(masks, axis=0) / np.arange(1, trace.T + 1)[:, None]
    penalties = trace.penalty * masks.sum(axis=1)
    header = ["sweep", "mask", "g", "g_lambda"] + [f"freq_{j}" for j in range(M)]
    lines = [",".join(header)]
    for t in range(trace.T):
        bits = "".join("1" if b else "0" for b in masks[t] > 0)
        g_lam = float(trace.objectives[t])
        g = g_lam - float(penalties[t]) if math.isfinite(g_lam) else g_lam
        row = [str(t + 1), bits, repr(g), repr(g_lam)] + [repr(float(f)) for f in cum[t]]
        lines.append(",".join(row))
    return "\r\n".join(lines) + "\r\n"
