"""Sequence data model, file ingestion and the synthetic covariance dataset.

File formats
------------
CSV features
    One frame per line, ``d`` comma-separated reals, no header.
Binary features
    ``b"TPF1"``, then ``T`` and ``d`` as little-endian uint32, then ``T*d``
    little-endian float32 values in row-major order.
Labels
    One decimal integer per line.
Folds
    One line per fold, comma-separated item indices.

A dataset directory holds ``features/<name>.{tpf,csv}``, ``labels/<name>.txt``
and ``folds.txt``; items are ordered by name.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError, ShapeError

BINARY_MAGIC = b"TPF1"
_HEADER = struct.Struct("<4sII")


@dataclass
class FeatureSequence:
    """A ``T x d`` matrix with one feature vector per frame."""

    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ShapeError(f"features must be a non-empty T x d matrix, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            bad = int(np.argwhere(~np.isfinite(frames))[0, 0])
            raise DataError(f"non-finite feature value in frame {bad}")
        self.frames = frames

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def d(self) -> int:
        return self.frames.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.frames if dtype is None else self.frames.astype(dtype)

    def __len__(self):
        return self.T


@dataclass
class LabelSequence:
    """Per-frame class indices in ``[0, C)``."""

    labels: np.ndarray
    C: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.size < 1:
            raise ShapeError("labels must be a non-empty 1-D array")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise DataError("labels must be integers")
        labels = labels.astype(np.int64)
        if self.C < 1:
            raise ConfigError(f"class count must be >= 1, got {self.C}")
        bad = np.flatnonzero((labels < 0) | (labels >= self.C))
        if bad.size:
            raise DataError(f"label {labels[bad[0]]} at line {bad[0]} outside [0, {self.C})")
        self.labels = labels

    @property
    def T(self) -> int:
        return self.labels.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.labels if dtype is None else self.labels.astype(dtype)

    def __len__(self):
        return self.T


@dataclass
class Dataset:
    items: list[tuple[FeatureSequence, LabelSequence]]
    C: int
    folds: list[list[int]] = field(default_factory=list)
    names: list[str] | None = None

    def __post_init__(self):
        if not self.items:
            raise DataError("dataset has no items")
        d = self.items[0][0].d
        for i, (x, y) in enumerate(self.items):
            if x.d != d:
                raise ShapeError(f"item {i} has {x.d} channels, expected {d}")
            if y.C != self.C:
                raise DataError(f"item {i} has class count {y.C}, expected {self.C}")
            if x.T != y.T:
                raise ShapeError(f"item {i}: {x.T} frames but {y.T} labels")
        if not self.folds:
            self.folds = [list(range(len(self.items)))]
        seen = sorted(i for fold in self.folds for i in fold)
        if seen != list(range(len(self.items))):
            raise DataError("folds must be disjoint and cover every item exactly once")
        if self.names is None:
            self.names = [f"{i:04d}" for i in range(len(self.items))]

    @property
    def d(self) -> int:
        return self.items[0][0].d

    def split(self, test_fold: int) -> tuple[list[int], list[int]]:
        """Return (train indices, test indices) holding out ``test_fold``."""
        if not 0 <= test_fold < len(self.folds):
            raise ConfigError(f"test_fold {test_fold} out of range for {len(self.folds)} folds")
        test = sorted(self.folds[test_fold])
        train = sorted(i for k, fold in enumerate(self.folds) if k != test_fold for i in fold)
        return train, test


def _infer_format(path: Path, format: str | None) -> str:
    if format is not None:
        if format not in ("csv", "binary"):
            raise ConfigError(f"unknown feature format {format!r}")
        return format
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def load_features(path, format: str | None = None) -> FeatureSequence:
    path = Path(path)
    format = _infer_format(path, format)
    if format == "binary":
        return _load_binary(path)
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(f"{path}: empty feature file")
    rows = []
    width = None
    for i, line in enumerate(lines):
        line = line.rstrip("\r")
        try:
            row = [float(tok) for tok in line.split(",")]
        except ValueError:
            raise ParseError(f"{path}: row {i} is not a list of reals") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"{path}: row {i} has {len(row)} values, expected {width}")
        rows.append(row)
    arr = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: non-finite value in row {int(np.argwhere(~np.isfinite(arr))[0, 0])}")
    return FeatureSequence(arr)


def _load_binary(path: Path) -> FeatureSequence:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ParseError(f"{path}: file shorter than the binary header")
    magic, T, d = _HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    if T < 1 or d < 1:
        raise ParseError(f"{path}: header declares T={T}, d={d}")
    expected = _HEADER.size + 4 * T * d
    if len(raw) != expected:
        raise ParseError(f"{path}: expected {expected} bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(T, d).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: non-finite value in row {int(np.argwhere(~np.isfinite(arr))[0, 0])}")
    return FeatureSequence(arr)


def store_features(x, path, format: str | None = None) -> None:
    path = Path(path)
    frames = np.asarray(x, dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeError(f"expected a T x d matrix, got shape {frames.shape}")
    if _infer_format(path, format) == "binary":
        T, d = frames.shape
        path.write_bytes(_HEADER.pack(BINARY_MAGIC, T, d) + frames.astype("<f4").tobytes())
    else:
        lines = (",".join(repr(float(v)) for v in row) for row in frames)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_labels(path, C: int) -> LabelSequence:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(f"{path}: empty label file")
    labels = []
    for i, line in enumerate(lines):
        tok = line.strip()
        if not tok or not tok.lstrip("-").isdigit():
            raise ParseError(f"{path}: line {i} is not an integer: {line!r}")
        labels.append(int(tok))
    try:
        return LabelSequence(np.array(labels, dtype=np.int64), C)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def store_labels(y, path) -> None:
    labels = np.asarray(y, dtype=np.int64)
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels), encoding="utf-8")


def load_folds(path) -> list[list[int]]:
    path = Path(path)
    folds = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        line = line.strip()
        if not line:
            folds.append([])
            continue
        try:
            folds.append([int(tok) for tok in line.split(",")])
        except ValueError:
            raise ParseError(f"{path}: fold line {i} is not a list of integers") from None
    return folds


def store_folds(folds, path) -> None:
    Path(path).write_text("".join(",".join(str(i) for i in fold) + "\n" for fold in folds),
                          encoding="utf-8")


def load_dataset(root, C: int, downsample_factor: int = 1) -> Dataset:
    """Load a dataset directory (see module docstring for the layout)."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    label_dir = root / "labels"
    feat_dir = root / "features"
    label_files = sorted(label_dir.glob("*.txt")) if label_dir.is_dir() else []
    if not label_files:
        raise FileNotFoundError(f"no label files in {label_dir}")
    items, names = [], []
    for lp in label_files:
        name = lp.stem
        candidates = [feat_dir / f"{name}.tpf", feat_dir / f"{name}.csv"]
        fp = next((c for c in candidates if c.is_file()), None)
        if fp is None:
            raise FileNotFoundError(f"missing feature file: {candidates[0]}")
        x = load_features(fp)
        y = load_labels(lp, C)
        if x.T != y.T:
            raise ShapeError(f"{fp}: {x.T} frames but {lp} has {y.T} labels")
        if downsample_factor != 1:
            x, y = downsample(x, y, downsample_factor)
        items.append((x, y))
        names.append(name)
    fold_path = root / "folds.txt"
    folds = load_folds(fold_path) if fold_path.is_file() else []
    return Dataset(items, C, folds, names)


def store_dataset(ds: Dataset, root, format: str = "binary") -> None:
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    ext = "csv" if format == "csv" else "tpf"
    for name, (x, y) in zip(ds.names, ds.items):
        store_features(x, root / "features" / f"{name}.{ext}", format)
        store_labels(y, root / "labels" / f"{name}.txt")
    store_folds(ds.folds, root / "folds.txt")


def _gaussians(gen: np.random.Generator, n: int) -> np.ndarray:
    # Box-Muller on uniforms drawn from the counter-based Philox stream
    m = (n + 1) // 2
    u1 = 1.0 - gen.random(m)  # (0, 1], keeps log finite
    u2 = gen.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * math.pi * u2), r * np.sin(2 * math.pi * u2)])
    return z[:n]


def synth_covariance_dataset(seed: int, n_sequences: int, T: int, d: int,
                             segment_len_range: tuple[int, int] = (10, 20),
                             rho: float = 0.9, n_folds: int | None = None) -> Dataset:
    """Two-class sequences whose classes share first-order statistics.

    Channels are grouped into pairs ``(0,1), (2,3), ...``; within a pair the
    correlation is ``+rho`` for class 0 and ``-rho`` for class 1, pairs are
    independent and every channel is zero-mean with unit variance.  With odd
    ``d`` the last channel is an independent standard normal.  Segment
    lengths are uniform on ``segment_len_range`` (the final segment is cut at
    ``T``) and labels alternate strictly.  Items are dealt into ``n_folds``
    contiguous folds (default ``min(5, n_sequences)``).
    """
    if not (0.0 < rho < 1.0):
        raise ConfigError(f"rho must lie in (0, 1), got {rho}")
    if d < 2:
        raise ConfigError(f"d must be >= 2, got {d}")
    lo, hi = segment_len_range
    if not (1 <= lo <= hi):
        raise ConfigError(f"bad segment_len_range {segment_len_range}")
    if n_sequences < 1 or T < 1:
        raise ConfigError("n_sequences and T must be >= 1")
    if n_folds is None:
        n_folds = min(5, n_sequences)
    if not 1 <= n_folds <= n_sequences:
        raise ConfigError(f"n_folds must lie in [1, {n_sequences}]")

    gen = np.random.Generator(np.random.Philox(seed))
    s = math.sqrt(1.0 - rho * rho)
    items = []
    for _ in range(n_sequences):
        labels = np.empty(T, dtype=np.int64)
        cls = int(gen.integers(0, 2))
        t = 0
        while t < T:
            n = int(gen.integers(lo, hi + 1))
            labels[t:t + n] = cls
            t += n
            cls = 1 - cls
        z = _gaussians(gen, T * d).reshape(T, d)
        x = z.copy()
        sign = np.where(labels == 0, 1.0, -1.0)
        for a in range(0, d - 1, 2):
            x[:, a + 1] = sign * rho * z[:, a] + s * z[:, a + 1]
        items.append((FeatureSequence(x), LabelSequence(labels, 2)))

    bounds = np.linspace(0, n_sequences, n_folds + 1).round().astype(int)
    folds = [list(range(bounds[k], bounds[k + 1])) for k in range(n_folds)]
    return Dataset(items, 2, folds)


def downsample(x: FeatureSequence, y: LabelSequence, factor: int):
    """Keep every ``factor``-th frame (and label), starting at frame 0."""
    if factor < 1:
        raise ConfigError(f"downsample factor must be >= 1, got {factor}")
    if x.T != y.T:
        raise ShapeError(f"{x.T} frames but {y.T} labels")
    return FeatureSequence(x.frames[::factor].copy()), LabelSequence(y.labels[::factor].copy(), y.C)
