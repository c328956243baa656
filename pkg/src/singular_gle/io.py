"""Artifact writers.  Every file carries the config hash, seed and tool version,
and identical inputs give byte-identical files."""

from __future__ import annotations

import io
import json
import os
import zipfile

import numpy as np

try:
    from importlib.metadata import PackageNotFoundError, version as _pkg_version

    try:
        VERSION = _pkg_version("artifact")
    except PackageNotFoundError:
        VERSION = "0.1.0"
except ImportError:  # pragma: no cover
    VERSION = "0.1.0"

_EPOCH = (1980, 1, 1, 0, 0, 0)


def provenance(config_hash, seed):
    return {"config_hash": config_hash, "seed": int(seed), "version": VERSION}


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, columns: dict, meta: dict):
    """Columns of equal length, preceded by ``# key: value`` header lines."""
    names = list(columns)
    cols = [np.asarray(columns[n]).ravel() for n in names]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("columns must have equal length")
    lines = [f"# {k}: {meta[k]}" for k in sorted(meta)]
    lines.append(",".join(names))
    for r in range(n):
        lines.append(",".join(_fmt(c[r]) for c in cols))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_csv(path):
    meta, header, rows = {}, None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                k, _, v = line[2:].partition(": ")
                meta[k] = v
            elif header is None:
                header = line.split(",")
            elif line:
                rows.append([float(x) if x not in ("true", "false") else x == "true" for x in line.split(",")])
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return meta, {h: data[:, i] for i, h in enumerate(header)}


def write_binary(path, arrays: dict, meta: dict):
    """``.npz`` archive with fixed timestamps; ``meta`` is stored as a JSON string array."""
    arrays = dict(arrays)
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())
    return path


def read_binary(path):
    with np.load(path, allow_pickle=False) as f:
        data = {k: f[k] for k in f.files}
    meta = json.loads(str(data.pop("__meta__")))
    return meta, data


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        x = float(x)
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def write_json(path, payload: dict, meta: dict):
    doc = {**_jsonable(payload), **meta}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def output_dir(flag=None, config_dir=None):
    """Flag beats config beats ``$SINGULAR_GLE_OUT`` beats ``./out``."""
    path = flag or config_dir or os.environ.get("SINGULAR_GLE_OUT") or "out"
    os.makedirs(path, exist_ok=True)
    return path
