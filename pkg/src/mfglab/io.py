"""Deterministic artifact writers: CSV (RFC 4180), JSON (sorted keys), SVG, and a hashed manifest."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

MANIFEST = "manifest.json"


def _atomic_write(path: Path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return _atomic_write(Path(path), buf.getvalue().encode("utf-8"))


def write_field_csv(path, t, x, values) -> Path:
    """One row per time node, one column per grid node."""
    header = ["t"] + [_fmt(xi) for xi in x]
    return write_csv(path, header, ([ti, *row] for ti, row in zip(t, values)))


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f):
            return None
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    if hasattr(obj, "value") and hasattr(obj, "name"):   # enums
        return obj.value
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    return _atomic_write(Path(path), dumps(obj).encode("utf-8"))


def write_svg(path, fig) -> Path:
    import matplotlib

    buf = io.BytesIO()
    with matplotlib.rc_context({"svg.hashsalt": "mfglab"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return _atomic_write(Path(path), buf.getvalue())


def heatmap(path, t, x, values, title: str = "", label: str = ""):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(values, origin="lower", aspect="auto", interpolation="nearest",
                   extent=(x[0], x[-1], t[0], t[-1]))
    fig.colorbar(im, ax=ax, label=label)
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    ax.set_title(title)
    try:
        return write_svg(path, fig)
    finally:
        plt.close(fig)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def file_hashes(out_dir) -> dict:
    out_dir = Path(out_dir)
    return {p.relative_to(out_dir).as_posix(): sha256(p)
            for p in sorted(out_dir.rglob("*")) if p.is_file() and p.name != MANIFEST}


def write_manifest(out_dir, **fields) -> Path:
    body = dict(fields)
    body["files"] = file_hashes(out_dir)
    return write_json(Path(out_dir) / MANIFEST, body)


def verify_manifest(out_dir) -> list:
    """Names of files that are missing from, or disagree with, the manifest."""
    out_dir = Path(out_dir)
    listed = json.loads((out_dir / MANIFEST).read_text("utf-8"))["files"]
    actual = file_hashes(out_dir)
    bad = [k for k in actual if listed.get(k) != actual[k]]
    bad += [k for k in listed if k not in actual]
    return sorted(set(bad))
