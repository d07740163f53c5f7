"""On-disk formats used by the command line.

A canonical snapshot file is usage-map text; its metadata lives next to it in
``<path>.meta.json``.  Synthesized layouts use the same pair of files, with
the page lists stored under the sidecar's ``layout`` key.  Every JSON
document is written with sorted keys so equal content gives equal bytes.
"""

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import InputError, SeriesError
from .markov import load_profile, save_profile
from .snapshot import (
    _DECODE, _INVALID_CODE, DEFAULT_PAGE_SIZE, Snapshot, load_usage_map,
    parse_kpageflags, write_usage_map,
)
from .synth import layout_document, layout_from_document, to_snapshot
from .timeseries import SnapshotSeries

SNAPSHOT_VERSION = 1
MANIFEST_VERSION = 1
SIDECAR_SUFFIX = ".meta.json"


def dumps(doc):
    return (json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n").encode("utf-8")


def _file_mode():
    # mkstemp creates 0600 files; give outputs the usual umask-derived mode.
    umask = os.umask(0)
    os.umask(umask)
    return 0o666 & ~umask


def atomic_write(path, data):
    """Write bytes to ``path`` via a temporary file and rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp, _file_mode())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def sidecar_path(path):
    return Path(str(path) + SIDECAR_SUFFIX)


def looks_like_usage_map(raw):
    codes = _DECODE[np.frombuffer(raw, dtype=np.uint8)]
    return bool(raw) and not np.any(codes == _INVALID_CODE)


def _read_sidecar(path):
    side = sidecar_path(path)
    if not side.exists():
        return None
    try:
        doc = json.loads(side.read_bytes())
    except json.JSONDecodeError as exc:
        raise InputError(f"{side}: not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("kind") != "snapshot":
        raise InputError(f"{side}: not a snapshot sidecar")
    return doc


def read_snapshot(path, fmt="auto", page_size_bytes=None, machine=None, timestamp=None):
    """Load a snapshot from a kpageflags dump or a usage-map file.

    ``fmt`` is ``"kpageflags"``, ``"usage"`` or ``"auto"``; auto-detection
    treats files made only of usage letters and whitespace as usage maps.
    A sidecar, when present, supplies the metadata.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    side = _read_sidecar(path) or {}
    page_size = page_size_bytes or side.get("page_size_bytes", DEFAULT_PAGE_SIZE)
    machine = machine if machine is not None else side.get("machine", path.name)
    timestamp = timestamp if timestamp is not None else side.get("timestamp")
    if fmt == "auto":
        fmt = "usage" if looks_like_usage_map(raw) else "kpageflags"
    if fmt == "usage":
        snap = load_usage_map(raw.decode("ascii", errors="replace"), page_size, machine, timestamp)
    elif fmt == "kpageflags":
        snap = parse_kpageflags(raw, page_size, machine, timestamp)
    else:
        raise InputError(f"unknown snapshot format {fmt!r}")
    reserved = int(side.get("reserved_pages", 0))
    extra = {"layout": side["layout"]} if "layout" in side else {}
    if reserved or extra:
        snap = Snapshot(snap.pages, snap.page_size_bytes, snap.machine, snap.timestamp,
                        reserved, extra)
    if "pages" in side and int(side["pages"]) != len(snap):
        raise InputError(f"{path}: sidecar expects {side['pages']} pages, found {len(snap)}")
    return snap


def snapshot_document(snapshot, layout=None):
    doc = {
        "kind": "snapshot",
        "version": SNAPSHOT_VERSION,
        "machine": snapshot.machine,
        "timestamp": snapshot.timestamp,
        "page_size_bytes": snapshot.page_size_bytes,
        "reserved_pages": snapshot.reserved_pages,
        "pages": len(snapshot),
    }
    if layout is not None:
        doc["layout"] = layout_document(layout)
    return doc


def write_snapshot(path, snapshot, layout=None):
    atomic_write(path, write_usage_map(snapshot))
    atomic_write(sidecar_path(path), dumps(snapshot_document(snapshot, layout)))


def write_layout(path, layout, page_size_bytes=DEFAULT_PAGE_SIZE):
    write_snapshot(path, to_snapshot(layout, page_size_bytes), layout)


def read_layout(path):
    snap = read_snapshot(path, fmt="usage")
    doc = snap.extra.get("layout")
    if doc is None:
        raise InputError(f"{path}: no layout metadata; was it written by synthesize?")
    return layout_from_document(snap, doc), snap


def read_profile(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    return load_profile(data)


def write_profile(path, profile):
    atomic_write(path, save_profile(profile))


def read_manifest(path):
    """Load a series manifest: ``{"version": 1, "snapshots": [{path, timestamp}]}``.

    Relative snapshot paths are resolved against the manifest's directory.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_bytes())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise SeriesError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("version") != MANIFEST_VERSION:
        raise SeriesError(f"{path}: unsupported manifest")
    entries = doc.get("snapshots")
    if not isinstance(entries, list) or len(entries) < 2:
        raise SeriesError(f"{path}: a manifest lists at least two snapshots")
    snapshots, stamps = [], []
    for k, entry in enumerate(entries):
        try:
            snap_path = path.parent / entry["path"]
            stamp = float(entry["timestamp"])
        except (KeyError, TypeError, ValueError):
            raise SeriesError(f"{path}: entry {k} needs path and numeric timestamp") from None
        snapshots.append(read_snapshot(snap_path, timestamp=stamp))
        stamps.append(stamp)
    return SnapshotSeries(tuple(snapshots), tuple(stamps))
