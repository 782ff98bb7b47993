"""Reading and writing datasets, archives and result tables.

Tables are comma-separated text whose first line is a ``#`` schema header
carrying the config hash and seed; floats are written with 17 significant
digits so files diff cleanly across implementations. Array archives are
directories of ``.npy`` files with a plain-text ``MANIFEST``.
"""

import csv
import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np

from .assembly import MultiTypeDataset
from .basis import ArealRegion
from .exceptions import ConfigError, DataError

FLOAT_FMT = ".17g"


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (tuple, np.ndarray)):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def config_hash(config):
    """Short SHA-256 digest of a JSON-able configuration."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        return format(v, FLOAT_FMT)
    return str(v)


def _parse_float(s, row_id, col):
    if s == "":
        return math.nan
    try:
        return float(s)
    except ValueError:
        raise DataError(f"row {row_id}: column {col!r} is not numeric ({s!r})", row_id=row_id) from None


# ---------------------------------------------------------------------------
# tables


def write_table(path, header, rows, schema, meta):
    """Write a schema-headed CSV; ``meta`` must hold ``config_hash`` and ``seed``."""
    tags = " ".join(f"{k}={meta[k]}" for k in sorted(meta))
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={schema} {tags}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_table(path):
    """Return ``(schema_tags, header, rows)`` with cells as strings."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing table {path}")
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# schema="):
            raise DataError(f"{path.name}: missing schema header line")
        tags = dict(t.split("=", 1) for t in first[2:].split())
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path.name}: missing column header") from None
        rows = [r for r in reader if r]
    for r in rows:
        if len(r) != len(header):
            raise DataError(f"{path.name}: row {r[0]!r} has {len(r)} fields, expected {len(header)}",
                            row_id=r[0])
    return tags, header, rows


# ---------------------------------------------------------------------------
# datasets

POINT_COLS = ("id", "x", "y", "z1", "z3", "sigma2_1")
REGION_COLS = ("region_id", "cells", "z2", "sigma2_2")


def write_dataset(path, dataset, meta, extra=None):
    """Write ``points.csv``, ``regions.csv``, ``cells.csv`` and ``meta.json``.

    ``extra`` may add keys to ``meta.json`` (e.g. basis size, declared counts).
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    z1 = dataset.z1_full()
    s1 = np.full(dataset.points.shape[0], np.nan)
    s1[dataset.fire_index] = dataset.sigma2_1
    p1, p3 = dataset.x1.shape[1], dataset.x3.shape[1]
    header = list(POINT_COLS) + [f"x1_{j}" for j in range(p1)] + [f"x3_{j}" for j in range(p3)]
    rows = []
    for i in range(dataset.points.shape[0]):
        rows.append([dataset.point_ids[i], dataset.points[i, 0], dataset.points[i, 1], z1[i],
                     int(dataset.z3[i]), s1[i], *dataset.x1[i], *dataset.x3[i]])
    write_table(path / "points.csv", header, rows, "points/1", meta)

    p2 = dataset.x2.shape[1]
    header = list(REGION_COLS) + [f"x2_{j}" for j in range(p2)]
    rows = [[reg.id, " ".join(map(str, reg.cells)), dataset.z2[k], dataset.sigma2_2[k], *dataset.x2[k]]
            for k, reg in enumerate(dataset.regions)]
    write_table(path / "regions.csv", header, rows, "regions/1", meta)

    cc = dataset.cell_centers
    write_table(path / "cells.csv", ["cell_id", "x", "y"],
                [[i, cc[i, 0], cc[i, 1]] for i in range(cc.shape[0])], "cells/1", meta)

    cell_area = dataset.regions[0].cell_area if dataset.regions else 1.0
    info = {"n_points": int(dataset.points.shape[0]), "n_regions": len(dataset.regions),
            "n_cells": int(cc.shape[0]), "cell_area": float(cell_area),
            "declared_points": int(dataset.points.shape[0]),
            "declared_regions": len(dataset.regions), "truncated": False, **meta}
    info.update(extra or {})
    write_json(path / "meta.json", info)
    return info


def read_meta(path):
    path = Path(path) / "meta.json"
    if not path.exists():
        raise DataError(f"missing {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from None


def _covariate_cols(header, prefix):
    cols = [(j, h) for j, h in enumerate(header) if h.startswith(prefix)]
    idx = sorted(cols, key=lambda t: int(t[1][len(prefix):]))
    return [j for j, _ in idx]


def read_dataset(path):
    """Load and validate a dataset directory written by :func:`write_dataset`.

    Zero-inflation consistency is enforced per row: ``z1`` must be present
    exactly where ``z3 == 1``. When ``meta.json`` declares more rows than the
    tables hold, the ``truncated`` flag must be set.
    """
    path = Path(path)
    meta = read_meta(path)
    _, header, rows = read_table(path / "points.csv")
    missing = [c for c in POINT_COLS if c not in header]
    if missing:
        raise DataError(f"points.csv lacks columns {missing}")
    col = {h: j for j, h in enumerate(header)}
    c1, c3 = _covariate_cols(header, "x1_"), _covariate_cols(header, "x3_")
    ids, pts, z1s, z3s, s1s, x1, x3 = [], [], [], [], [], [], []
    for r in rows:
        rid = r[col["id"]]
        z3 = r[col["z3"]]
        if z3 not in ("0", "1"):
            raise DataError(f"row {rid}: z3 must be 0 or 1, got {z3!r}", row_id=rid)
        z1 = r[col["z1"]]
        if z3 == "0" and z1 != "":
            raise DataError(f"row {rid}: z1 present where z3 = 0", row_id=rid)
        if z3 == "1" and z1 == "":
            raise DataError(f"row {rid}: z1 missing where z3 = 1", row_id=rid)
        ids.append(rid)
        pts.append((_parse_float(r[col["x"]], rid, "x"), _parse_float(r[col["y"]], rid, "y")))
        z3s.append(int(z3))
        if z3 == "1":
            z1s.append(_parse_float(z1, rid, "z1"))
            s = _parse_float(r[col["sigma2_1"]], rid, "sigma2_1")
            s1s.append(1.0 if math.isnan(s) else s)
        x1.append([_parse_float(r[j], rid, header[j]) for j in c1])
        x3.append([_parse_float(r[j], rid, header[j]) for j in c3])

    _, rheader, rrows = read_table(path / "regions.csv")
    missing = [c for c in REGION_COLS if c not in rheader]
    if missing:
        raise DataError(f"regions.csv lacks columns {missing}")
    rcol = {h: j for j, h in enumerate(rheader)}
    c2 = _covariate_cols(rheader, "x2_")
    cell_area = float(meta.get("cell_area", 1.0))
    regions, z2, s2, x2 = [], [], [], []
    for r in rrows:
        rid = r[rcol["region_id"]]
        try:
            cells = tuple(int(c) for c in r[rcol["cells"]].split())
        except ValueError:
            raise DataError(f"region {rid}: malformed cell list", row_id=rid) from None
        try:
            regions.append(ArealRegion(rid, cells, cell_area))
        except ValueError as exc:
            raise DataError(f"region {rid}: {exc}", row_id=rid) from None
        z2.append(_parse_float(r[rcol["z2"]], rid, "z2"))
        s = _parse_float(r[rcol["sigma2_2"]], rid, "sigma2_2")
        s2.append(1.0 if math.isnan(s) else s)
        x2.append([_parse_float(r[j], rid, rheader[j]) for j in c2])

    _, _, crows = read_table(path / "cells.csv")
    centers = np.array([[float(r[1]), float(r[2])] for r in crows]).reshape(-1, 2)

    declared = (meta.get("declared_points", len(rows)), meta.get("declared_regions", len(rrows)))
    if (declared[0] != len(rows) or declared[1] != len(rrows)) and not meta.get("truncated"):
        raise DataError(
            f"meta declares {declared[0]} points / {declared[1]} regions but tables hold "
            f"{len(rows)} / {len(rrows)} and are not marked truncated"
        )
    n1, n2 = len(rows), len(rrows)
    return MultiTypeDataset(
        points=np.array(pts, dtype=float).reshape(-1, 2),
        z3=np.array(z3s, dtype=np.int8),
        z1=np.array(z1s, dtype=float),
        regions=tuple(regions),
        z2=np.array(z2, dtype=float),
        x1=np.array(x1, dtype=float).reshape(n1, len(c1)),
        x2=np.array(x2, dtype=float).reshape(n2, len(c2)),
        x3=np.array(x3, dtype=float).reshape(n1, len(c3)),
        cell_centers=centers,
        sigma2_1=np.array(s1s, dtype=float),
        sigma2_2=np.array(s2, dtype=float),
        point_ids=tuple(ids),
    )


# ---------------------------------------------------------------------------
# JSON and array archives


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n")


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing file {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def write_archive(path, arrays, meta):
    """Write each array as ``<name>.npy`` plus a ``MANIFEST`` listing shapes and digests."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [f"# {k}={meta[k]}" for k in sorted(meta)]
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        np.save(path / f"{name}.npy", a, allow_pickle=False)
        digest = hashlib.sha256((path / f"{name}.npy").read_bytes()).hexdigest()
        shape = "x".join(map(str, a.shape)) or "scalar"
        lines.append(f"{name} {a.dtype.str} {shape} {digest}")
    (path / "MANIFEST").write_text("\n".join(lines) + "\n")


def read_archive(path, verify=True):
    """Return ``(arrays, meta)`` from an archive directory."""
    path = Path(path)
    man = path / "MANIFEST"
    if not man.exists():
        raise DataError(f"{path} is not an archive (no MANIFEST)")
    meta, arrays = {}, {}
    for line in man.read_text().splitlines():
        if line.startswith("# "):
            k, v = line[2:].split("=", 1)
            meta[k] = v
            continue
        name, _, _, digest = line.split()
        f = path / f"{name}.npy"
        if verify and hashlib.sha256(f.read_bytes()).hexdigest() != digest:
            raise DataError(f"{f}: checksum mismatch")
        arrays[name] = np.load(f, allow_pickle=False)
    return arrays, meta


def tree_digest(path, exclude=("timing",)):
    """Digest of every file under ``path`` except names starting with ``exclude``."""
    h = hashlib.sha256()
    root = Path(path)
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for f in sorted(filenames):
            if f.startswith(tuple(exclude)):
                continue
            p = Path(dirpath) / f
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
