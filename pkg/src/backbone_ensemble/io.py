"""NPY matrices and the JSON dataset manifest.

Everything on disk is either a version 1.0 ``.npy`` file (float32 logits and
features, int64 labels) or a manifest describing how those files fit
together. Loading a manifest is lazy: matrices are read only when a split is
requested.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib import format as npformat

from .errors import (
    DuplicateBackboneName,
    IoFailure,
    MalformedHeader,
    MissingFeatures,
    NonFiniteValue,
    SchemaViolation,
    UnsupportedDtype,
)

SUPPORTED_DTYPES = (np.dtype("<f4"), np.dtype("<i8"))


def read_npy_header(path):
    """Return ``(shape, dtype)`` of an NPY file without reading its payload."""
    try:
        with open(path, "rb") as f:
            return _read_header(f)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _read_header(f):
    try:
        version = npformat.read_magic(f)
    except ValueError as exc:
        raise MalformedHeader(str(exc)) from exc
    if version != (1, 0):
        raise MalformedHeader(f"NPY version {version} is not 1.0")
    try:
        shape, fortran_order, dtype = npformat.read_array_header_1_0(f)
    except ValueError as exc:
        raise MalformedHeader(str(exc)) from exc
    if fortran_order:
        raise MalformedHeader("Fortran-ordered arrays are not supported")
    if dtype not in SUPPORTED_DTYPES:
        raise UnsupportedDtype(f"dtype {dtype.str!r} not in ('<f4', '<i8')")
    if len(shape) not in (1, 2):
        raise MalformedHeader(f"expected a 1-D or 2-D array, got shape {shape}")
    return tuple(shape), dtype


def load_npy(path) -> np.ndarray:
    """Load a strict NPY 1.0 file as a 2-D array (1-D arrays come back N x 1).

    The array keeps its on-disk dtype so that a save/load round trip is
    bit-exact.
    """
    try:
        with open(path, "rb") as f:
            shape, dtype = _read_header(f)
            count = int(np.prod(shape))
            data = np.fromfile(f, dtype=dtype, count=count)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if data.size != count:
        raise MalformedHeader(f"{path}: payload holds {data.size} values, header says {count}")
    if dtype.kind == "f" and not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{path} contains NaN or Inf")
    if len(shape) == 1:
        shape = (shape[0], 1)
    return data.reshape(shape)


def load_labels(path) -> np.ndarray:
    """Load an int64 label vector stored as N or N x 1."""
    arr = load_npy(path)
    if arr.dtype != np.int64:
        raise UnsupportedDtype(f"labels in {path} must be int64, got {arr.dtype}")
    if arr.shape[1] != 1:
        raise SchemaViolation(f"labels in {path} must be 1-D, got shape {arr.shape}")
    return arr[:, 0].copy()


def save_npy(m, path) -> None:
    """Write ``m`` as NPY 1.0, C-order; integer input becomes '<i8', anything else '<f4'."""
    arr = np.asarray(m)
    if arr.ndim not in (1, 2):
        raise ValueError(f"expected a 1-D or 2-D array, got {arr.ndim}-D")
    dtype = "<i8" if arr.dtype.kind in "iub" else "<f4"
    arr = np.ascontiguousarray(arr, dtype=dtype)
    try:
        with open(path, "wb") as f:
            npformat.write_array(f, arr, version=(1, 0), allow_pickle=False)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class BackboneEntry:
    name: str
    gflops: float
    feature_dim: int
    logits: dict
    features: dict | None = None
    probe_init: Path | None = None


@dataclass
class DatasetBundle:
    """Backbones, labels and splits of one dataset, as described by a manifest.

    Backbone order is the manifest order and defines the stack index used by
    every combiner.
    """

    name: str
    num_classes: int
    splits: list
    labels: dict
    backbones: list
    root: Path = field(default_factory=Path)

    @property
    def names(self) -> list:
        return [b.name for b in self.backbones]

    @property
    def gflops(self) -> np.ndarray:
        return np.array([b.gflops for b in self.backbones], dtype=np.float64)

    @property
    def has_features(self) -> bool:
        return all(b.features is not None for b in self.backbones)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def load_labels(self, split: str) -> np.ndarray:
        return load_labels(self.labels[split])

    def load_logits(self, split: str, backbones=None) -> np.ndarray:
        """Stacked logits of shape (B, N, C) in float64."""
        entries = self._select(backbones)
        return np.stack([load_npy(b.logits[split]).astype(np.float64) for b in entries])

    def load_features(self, split: str, backbones=None) -> list:
        """Per-backbone float64 feature matrices, in stack order."""
        entries = self._select(backbones)
        missing = [b.name for b in entries if b.features is None]
        if missing:
            raise MissingFeatures(f"no features for backbones {missing}")
        return [load_npy(b.features[split]).astype(np.float64) for b in entries]

    def _select(self, backbones):
        if backbones is None:
            return self.backbones
        return [self.backbones[i] for i in backbones]


def _require(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaViolation(f"{where}: missing field {key!r}")
    value = obj[key]
    ok = isinstance(value, kind) and not (kind in (int, (int, float)) and isinstance(value, bool))
    if not ok:
        raise SchemaViolation(f"{where}: field {key!r} has wrong type {type(value).__name__}")
    return value


def _path_map(obj, where, root):
    if not all(isinstance(k, str) and isinstance(v, str) for k, v in obj.items()):
        raise SchemaViolation(f"{where}: expected a mapping of split name to path")
    return {k: root / v for k, v in obj.items()}


def load_manifest(path) -> DatasetBundle:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON ({exc})") from exc
    root = path.parent
    name = _require(raw, "name", str, "manifest")
    num_classes = _require(raw, "num_classes", int, "manifest")
    if num_classes < 1:
        raise SchemaViolation("manifest: num_classes must be >= 1")
    splits = _require(raw, "splits", list, "manifest")
    if not all(isinstance(s, str) for s in splits):
        raise SchemaViolation("manifest: splits must be strings")
    labels = _path_map(_require(raw, "labels", dict, "manifest"), "labels", root)

    backbones = []
    seen = set()
    for i, entry in enumerate(_require(raw, "backbones", list, "manifest")):
        where = f"backbones[{i}]"
        bname = _require(entry, "name", str, where)
        if bname in seen:
            raise DuplicateBackboneName(f"backbone {bname!r} listed twice")
        seen.add(bname)
        gflops = float(_require(entry, "gflops", (int, float), where))
        if gflops < 0:
            raise SchemaViolation(f"{where}: gflops must be >= 0")
        feature_dim = _require(entry, "feature_dim", int, where)
        logits = _path_map(_require(entry, "logits", dict, where), where, root)
        features = None
        if "features" in entry:
            features = _path_map(_require(entry, "features", dict, where), where, root)
        probe_init = None
        if "probe_init" in entry:
            probe_init = root / _require(entry, "probe_init", str, where)
        backbones.append(BackboneEntry(bname, gflops, feature_dim, logits, features, probe_init))
    if not backbones:
        raise SchemaViolation("manifest: at least one backbone is required")
    return DatasetBundle(name, num_classes, list(splits), labels, backbones, root)


def write_manifest(bundle: DatasetBundle, path) -> None:
    """Serialize ``bundle`` with paths relative to the manifest's directory."""
    path = Path(path)
    base = path.parent

    def rel(p):
        return os.path.relpath(p, base).replace(os.sep, "/")

    doc = {
        "name": bundle.name,
        "num_classes": bundle.num_classes,
        "splits": list(bundle.splits),
        "labels": {k: rel(v) for k, v in bundle.labels.items()},
        "backbones": [],
    }
    for b in bundle.backbones:
        entry = {"name": b.name, "gflops": b.gflops, "feature_dim": b.feature_dim,
                 "logits": {k: rel(v) for k, v in b.logits.items()}}
        if b.features is not None:
            entry["features"] = {k: rel(v) for k, v in b.features.items()}
        if b.probe_init is not None:
            entry["probe_init"] = rel(b.probe_init)
        doc["backbones"].append(entry)
    path.write_text(json.dumps(doc, indent=2) + "\n")


# ---------------------------------------------------------------------------
# validation


def validate_bundle(b: DatasetBundle) -> list:
    """List every invariant violation of ``b``; an empty list means usable.

    Matrix payloads are never read, only headers. Label payloads are memory
    mapped for the range check.
    """
    report = []

    def header(p, what):
        if not Path(p).is_file():
            report.append(f"{what}: missing file {p}")
            return None
        try:
            return read_npy_header(p)
        except Exception as exc:  # every header failure becomes a report entry
            report.append(f"{what}: {type(exc).__name__}: {exc}")
            return None

    for required in ("train", "test"):
        if required not in b.splits:
            report.append(f"split {required!r} not declared")

    rows = {}
    for split in b.splits:
        where = f"labels[{split}]"
        if split not in b.labels:
            report.append(f"{where}: no label file")
            continue
        h = header(b.labels[split], where)
        if h is None:
            continue
        shape, dtype = h
        if dtype != np.int64:
            report.append(f"{where}: labels must be int64, got {dtype.str}")
            continue
        if len(shape) == 2 and shape[1] != 1:
            report.append(f"{where}: labels must be 1-D, got shape {shape}")
            continue
        rows[split] = shape[0]
        values = np.load(b.labels[split], mmap_mode="r")
        if values.size and (values.min() < 0 or values.max() >= b.num_classes):
            report.append(f"{where}: label out of range [0, {b.num_classes})")

    for entry in b.backbones:
        for kind in ("logits", "features"):
            paths = getattr(entry, kind)
            if paths is None:
                continue
            width = b.num_classes if kind == "logits" else entry.feature_dim
            for split in b.splits:
                where = f"{entry.name}.{kind}[{split}]"
                if split not in paths:
                    report.append(f"{where}: no file for split")
                    continue
                h = header(paths[split], where)
                if h is None:
                    continue
                shape, dtype = h
                if dtype != np.float32:
                    report.append(f"{where}: expected float32, got {dtype.str}")
                if len(shape) != 2:
                    report.append(f"{where}: matrix must be 2-D, got shape {shape}")
                    continue
                if shape[1] != width:
                    report.append(f"{where}: column count {shape[1]} != expected {width}")
                if split in rows and shape[0] != rows[split]:
                    report.append(
                        f"{where}: row count mismatch ({shape[0]} rows, labels have {rows[split]})")
        if entry.probe_init is not None:
            where = f"{entry.name}.probe_init"
            h = header(entry.probe_init, where)
            if h is not None and h[0] != (b.num_classes, entry.feature_dim):
                report.append(f"{where}: shape {h[0]} != ({b.num_classes}, {entry.feature_dim})")
    return report
