"""Crowd-labeled dataset model, diagnostics, and file formats.

Class indices are 0-based everywhere, including on disk.

A dataset directory contains:
    meta.json        {"n", "d", "c", "r", "preset", "seed",
                      "format_version": 1, "features_file": ...}
    features.csv     header "id,f0,...,f{D-1}", ids 0..N-1 in order
      or features.bin  magic "CCCD", u32 version, u32 N, u32 D, f64 LE row-major
    annotations.csv  header "instance,annotator,label", no duplicates
    truth.csv        optional, header "instance,label"

An evaluation set (features + truth, no annotations) uses the same
layout with r = 0 and no annotations.csv; see save_eval_set.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DataFormatError
from .models import Classifier, batch_forward
from .rng import RngStream

FORMAT_VERSION = 1
_FEATURES_MAGIC = b"CCCD"


@dataclass
class CrowdDataset:
    features: np.ndarray       # (N, D)
    class_count: int
    annotator_count: int
    ann_instance: np.ndarray   # (A,) int64
    ann_annotator: np.ndarray  # (A,) int64
    ann_label: np.ndarray      # (A,) int64
    truth: np.ndarray | None = None
    preset: str | None = None
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def annotation_count(self) -> int:
        return self.ann_instance.shape[0]

    def validate(self, require_full_cover: bool = True) -> None:
        n, r, c = self.n, self.annotator_count, self.class_count
        ai, ar, al = self.ann_instance, self.ann_annotator, self.ann_label
        if ai.shape != ar.shape or ai.shape != al.shape:
            raise ContractError("annotation arrays must share one length")
        if ai.size and (ai.min() < 0 or ai.max() >= n):
            raise ContractError("annotation instance id out of range")
        if ar.size and (ar.min() < 0 or ar.max() >= r):
            raise ContractError("annotation annotator id out of range")
        if al.size and (al.min() < 0 or al.max() >= c):
            raise ContractError("annotation label out of range")
        pairs = ai * r + ar
        if np.unique(pairs).size != pairs.size:
            raise ContractError("duplicate (instance, annotator) annotation")
        if require_full_cover and np.unique(ai).size != n:
            raise ContractError("every instance needs at least one annotation")
        if self.truth is not None:
            if self.truth.shape[0] != n:
                raise ContractError("truth length must equal instance count")
            if self.truth.size and (self.truth.min() < 0 or self.truth.max() >= c):
                raise ContractError("truth label out of range")

    def instance_slices(self):
        """CSR view of annotations grouped by instance.

        Returns (order-applied arrays sorted by (instance, annotator),
        ptr) where annotations of instance i live at [ptr[i], ptr[i+1]).
        """
        order = np.lexsort((self.ann_annotator, self.ann_instance))
        ai = self.ann_instance[order]
        ptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(ptr, ai + 1, 1)
        np.cumsum(ptr, out=ptr)
        return ai, self.ann_annotator[order], self.ann_label[order], ptr


@dataclass
class MetaSet:
    """Class-balanced distilled instances with pseudo-labels."""
    features: np.ndarray  # (M', D)
    labels: np.ndarray    # (M',) int64

    @property
    def size(self) -> int:
        return self.labels.shape[0]


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def instance_noise_rate(ds: CrowdDataset) -> float:
    """Fraction of instances whose annotation set misses the true label."""
    if ds.truth is None:
        raise ContractError("instance_noise_rate requires truth labels")
    hit = np.zeros(ds.n, dtype=bool)
    correct = ds.ann_label == ds.truth[ds.ann_instance]
    hit[ds.ann_instance[correct]] = True
    return float(1.0 - hit.mean())


def annotation_noise_rate(ds: CrowdDataset) -> float:
    """Fraction of individual annotations that disagree with truth."""
    if ds.truth is None:
        raise ContractError("annotation_noise_rate requires truth labels")
    if ds.annotation_count == 0:
        return 0.0
    wrong = ds.ann_label != ds.truth[ds.ann_instance]
    return float(wrong.mean())


def true_confusion_matrix(ds: CrowdDataset, r: int) -> np.ndarray:
    """Empirical confusion of annotator r against truth.

    Row p, col q counts how often r reported q on a true-p instance,
    normalized per row. Rows with no labeled instance are all-zero.
    """
    if ds.truth is None:
        raise ContractError("true_confusion_matrix requires truth labels")
    if not 0 <= r < ds.annotator_count:
        raise ContractError(f"annotator id {r} out of range")
    C = ds.class_count
    mask = ds.ann_annotator == r
    cm = np.zeros((C, C))
    np.add.at(cm, (ds.truth[ds.ann_instance[mask]], ds.ann_label[mask]), 1.0)
    rowsum = cm.sum(axis=1, keepdims=True)
    np.divide(cm, rowsum, out=cm, where=rowsum > 0)
    return cm


def confusion_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared difference between two equally shaped matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(((a - b) ** 2).mean())


def annotation_histogram(ds: CrowdDataset) -> np.ndarray:
    """Label count per annotator; sums to the total annotation count."""
    return np.bincount(ds.ann_annotator, minlength=ds.annotator_count).astype(np.int64)


def evaluate_accuracy(clf: Classifier, features: np.ndarray, labels: np.ndarray) -> float:
    """Argmax accuracy; argmax ties break toward the lowest class index."""
    _, _, P = batch_forward(clf, features)
    pred = P.argmax(axis=1)
    return float((pred == np.asarray(labels)).mean())


# ---------------------------------------------------------------------------
# synthetic features
# ---------------------------------------------------------------------------

def make_blobs(N: int, C: int, D: int, spread: float, rng: RngStream,
               radius: float = 1.0):
    """Class-balanced Gaussian clumps with deterministic means.

    Means sit on scaled coordinate axes when D >= C, otherwise on a
    circle in the first two feature dimensions. Classes are assigned
    round-robin so counts are balanced within one.
    """
    if N < 1 or C < 1 or D < 1:
        raise ContractError("N, C, D must be >= 1")
    if D < C and D < 2:
        raise ContractError("circle placement needs D >= 2")
    means = np.zeros((C, D))
    if D >= C:
        means[np.arange(C), np.arange(C)] = radius
    else:
        ang = 2.0 * np.pi * np.arange(C) / C
        means[:, 0] = radius * np.cos(ang)
        means[:, 1] = radius * np.sin(ang)
    truth = (np.arange(N) % C).astype(np.int64)
    features = means[truth] + spread * rng.normal((N, D))
    return features, truth


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _write_features_csv(path: Path, features: np.ndarray) -> None:
    D = features.shape[1]
    with open(path, "w", newline="") as fh:
        fh.write("id," + ",".join(f"f{j}" for j in range(D)) + "\n")
        for i, row in enumerate(features):
            fh.write(str(i) + "," + ",".join(_fmt(v) for v in row) + "\n")


def _write_features_bin(path: Path, features: np.ndarray) -> None:
    N, D = features.shape
    with open(path, "wb") as fh:
        fh.write(_FEATURES_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, N, D))
        fh.write(np.ascontiguousarray(features, dtype="<f8").tobytes())


def save_dataset(ds: CrowdDataset, directory, features_format: str = "csv") -> None:
    """Write the dataset directory; annotations in (instance, annotator) order."""
    if features_format not in ("csv", "bin"):
        raise ContractError(f"unknown features format {features_format!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    features_file = "features.csv" if features_format == "csv" else "features.bin"
    meta = {
        "n": ds.n, "d": ds.d, "c": ds.class_count, "r": ds.annotator_count,
        "preset": ds.preset, "seed": ds.seed,
        "format_version": FORMAT_VERSION, "features_file": features_file,
    }
    with open(directory / "meta.json", "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    if features_format == "csv":
        _write_features_csv(directory / "features.csv", ds.features)
    else:
        _write_features_bin(directory / "features.bin", ds.features)
    order = np.lexsort((ds.ann_annotator, ds.ann_instance))
    with open(directory / "annotations.csv", "w", newline="") as fh:
        fh.write("instance,annotator,label\n")
        for idx in order:
            fh.write(f"{ds.ann_instance[idx]},{ds.ann_annotator[idx]},{ds.ann_label[idx]}\n")
    if ds.truth is not None:
        with open(directory / "truth.csv", "w", newline="") as fh:
            fh.write("instance,label\n")
            for i, y in enumerate(ds.truth):
                fh.write(f"{i},{y}\n")


def _read_int(field: str, path: Path, lineno: int, what: str) -> int:
    try:
        return int(field)
    except ValueError:
        raise DataFormatError(f"{what} is not an integer: {field!r}", path, lineno) from None


def _load_features_csv(path: Path, n: int, d: int) -> np.ndarray:
    if not path.exists():
        raise DataFormatError("missing features file", path)
    features = np.empty((n, d))
    with open(path, newline="") as fh:
        header = fh.readline().rstrip("\n")
        expected = "id," + ",".join(f"f{j}" for j in range(d))
        if header != expected:
            raise DataFormatError(f"bad features header {header!r}", path, 1)
        count = 0
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != d + 1:
                raise DataFormatError(f"expected {d + 1} fields, got {len(parts)}", path, lineno)
            i = _read_int(parts[0], path, lineno, "instance id")
            if i != count:
                raise DataFormatError(f"ids must be 0..N-1 in order, got {i}", path, lineno)
            if i >= n:
                raise DataFormatError(f"instance id {i} out of range", path, lineno)
            try:
                features[i] = [float(v) for v in parts[1:]]
            except ValueError:
                raise DataFormatError("non-numeric feature value", path, lineno) from None
            count += 1
    if count != n:
        raise DataFormatError(f"expected {n} feature rows, found {count}", path)
    return features


def _load_features_bin(path: Path, n: int, d: int) -> np.ndarray:
    if not path.exists():
        raise DataFormatError("missing features file", path)
    blob = path.read_bytes()
    if blob[:4] != _FEATURES_MAGIC:
        raise DataFormatError("bad features magic", path)
    version, bn, bd = struct.unpack("<III", blob[4:16])
    if version != FORMAT_VERSION:
        raise DataFormatError(f"unsupported features version {version}", path)
    if (bn, bd) != (n, d):
        raise DataFormatError(f"features shape ({bn}, {bd}) != meta ({n}, {d})", path)
    if len(blob) != 16 + 8 * n * d:
        raise DataFormatError("features payload size mismatch", path)
    return np.frombuffer(blob[16:], dtype="<f8").reshape(n, d).copy()


def _load_meta(directory: Path) -> dict:
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise DataFormatError("missing meta.json", meta_path)
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"meta.json is not valid JSON: {exc}", meta_path) from None
    for key in ("n", "d", "c", "r", "format_version"):
        if key not in meta:
            raise DataFormatError(f"meta.json missing field {key!r}", meta_path)
    if meta["format_version"] != FORMAT_VERSION:
        raise DataFormatError(
            f"unsupported format_version {meta['format_version']}", meta_path)
    return meta


def _load_truth(path: Path, n: int, c: int) -> np.ndarray:
    truth = np.full(n, -1, dtype=np.int64)
    with open(path, newline="") as fh:
        header = fh.readline().rstrip("\n")
        if header != "instance,label":
            raise DataFormatError(f"bad truth header {header!r}", path, 1)
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataFormatError("expected 2 fields", path, lineno)
            i = _read_int(parts[0], path, lineno, "instance id")
            y = _read_int(parts[1], path, lineno, "label")
            if not 0 <= i < n:
                raise DataFormatError(f"instance id {i} out of range", path, lineno)
            if not 0 <= y < c:
                raise DataFormatError(f"label {y} out of range", path, lineno)
            if truth[i] != -1:
                raise DataFormatError(f"duplicate truth row for instance {i}", path, lineno)
            truth[i] = y
    if (truth == -1).any():
        raise DataFormatError("truth.csv does not cover every instance", path)
    return truth


def load_dataset(directory) -> CrowdDataset:
    """Load and fully validate a crowd dataset directory."""
    directory = Path(directory)
    meta = _load_meta(directory)
    n, d, c, r = meta["n"], meta["d"], meta["c"], meta["r"]
    features_file = meta.get("features_file", "features.csv")
    if features_file.endswith(".bin"):
        features = _load_features_bin(directory / features_file, n, d)
    else:
        features = _load_features_csv(directory / features_file, n, d)

    ann_path = directory / "annotations.csv"
    if not ann_path.exists():
        raise DataFormatError("missing annotations.csv", ann_path)
    ai, ar, al = [], [], []
    seen = set()
    with open(ann_path, newline="") as fh:
        header = fh.readline().rstrip("\n")
        if header != "instance,annotator,label":
            raise DataFormatError(f"bad annotations header {header!r}", ann_path, 1)
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise DataFormatError("expected 3 fields", ann_path, lineno)
            i = _read_int(parts[0], ann_path, lineno, "instance id")
            a = _read_int(parts[1], ann_path, lineno, "annotator id")
            y = _read_int(parts[2], ann_path, lineno, "label")
            if not 0 <= i < n:
                raise DataFormatError(f"instance id {i} out of range [0, {n})", ann_path, lineno)
            if not 0 <= a < r:
                raise DataFormatError(f"annotator id {a} out of range [0, {r})", ann_path, lineno)
            if not 0 <= y < c:
                raise DataFormatError(f"label {y} out of range [0, {c})", ann_path, lineno)
            if (i, a) in seen:
                raise DataFormatError(f"duplicate annotation ({i}, {a})", ann_path, lineno)
            seen.add((i, a))
            ai.append(i)
            ar.append(a)
            al.append(y)

    truth = None
    truth_path = directory / "truth.csv"
    if truth_path.exists():
        truth = _load_truth(truth_path, n, c)

    ds = CrowdDataset(
        features=features, class_count=c, annotator_count=r,
        ann_instance=np.asarray(ai, dtype=np.int64),
        ann_annotator=np.asarray(ar, dtype=np.int64),
        ann_label=np.asarray(al, dtype=np.int64),
        truth=truth, preset=meta.get("preset"), seed=meta.get("seed"),
    )
    try:
        ds.validate()
    except ContractError as exc:
        raise DataFormatError(str(exc), directory) from None
    return ds


def save_eval_set(features: np.ndarray, labels: np.ndarray, directory,
                  class_count: int, seed: int | None = None) -> None:
    """Write a labeled feature set (no annotations) for testing/eval."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n, d = features.shape
    meta = {
        "n": n, "d": d, "c": class_count, "r": 0,
        "preset": None, "seed": seed,
        "format_version": FORMAT_VERSION, "features_file": "features.csv",
    }
    with open(directory / "meta.json", "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _write_features_csv(directory / "features.csv", features)
    with open(directory / "truth.csv", "w", newline="") as fh:
        fh.write("instance,label\n")
        for i, y in enumerate(labels):
            fh.write(f"{i},{y}\n")


def load_eval_set(directory):
    """Load (features, labels, class_count) from an eval-set directory."""
    directory = Path(directory)
    meta = _load_meta(directory)
    n, d, c = meta["n"], meta["d"], meta["c"]
    features_file = meta.get("features_file", "features.csv")
    if features_file.endswith(".bin"):
        features = _load_features_bin(directory / features_file, n, d)
    else:
        features = _load_features_csv(directory / features_file, n, d)
    truth_path = directory / "truth.csv"
    if not truth_path.exists():
        raise DataFormatError("eval set requires truth.csv", truth_path)
    labels = _load_truth(truth_path, n, c)
    return features, labels, c
