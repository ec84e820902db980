"""Dataset containers, loaders and preprocessing."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labelled generator set of a k-NN classifier.

    ``points`` is ``(n, d)``, ``labels`` holds class indices in ``0..n_classes-1``.
    ``classes`` keeps the original label values, in index order, so that
    results can be mapped back.  Arrays are made read-only on construction.
    """

    points: np.ndarray
    labels: np.ndarray
    n_classes: int
    classes: tuple = ()
    names: tuple | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        labels = np.array(self.labels, dtype=np.intp)
        if points.ndim != 2:
            raise DataError(f"points must be 2-D, got shape {points.shape}")
        if labels.shape != (points.shape[0],):
            raise DataError("labels must have one entry per point")
        if not np.all(np.isfinite(points)):
            raise DataError("points contain non-finite coordinates")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise DataError("labels must lie in 0..n_classes-1")
        points.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)
        if not self.classes:
            object.__setattr__(self, "classes", tuple(range(self.n_classes)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.n_classes == other.n_classes and self.classes == other.classes
                and self.names == other.names
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.labels, other.labels))

    __hash__ = None

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.points[idx], self.labels[idx], self.n_classes,
                       self.classes, self.names, dict(self.meta))

    def fingerprint(self) -> str:
        """SHA-256 digest of coordinates and labels."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.points).tobytes())
        h.update(np.ascontiguousarray(self.labels).astype(np.int64).tobytes())
        return h.hexdigest()


def _encode_labels(raw) -> tuple[np.ndarray, tuple]:
    # order-preserving remap of the original label values
    values = sorted(set(raw))
    lookup = {v: i for i, v in enumerate(values)}
    return np.array([lookup[v] for v in raw], dtype=np.intp), tuple(values)


def _as_number(token: str):
    value = float(token)
    return int(value) if value.is_integer() else value


def load_libsvm(path) -> Dataset:
    """Read a LIBSVM text file (``label idx:val ...``, 1-based indices) densely."""
    rows, raw_labels = [], []
    d = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                label = _as_number(tokens[0])
                feats = {}
                for tok in tokens[1:]:
                    idx, val = tok.split(":", 1)
                    idx = int(idx)
                    if idx < 1:
                        raise ValueError(f"feature index {idx} < 1")
                    feats[idx] = float(val)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: malformed line ({exc})") from None
            if feats:
                d = max(d, max(feats))
            rows.append(feats)
            raw_labels.append(label)
    if not rows:
        raise DataError(f"{path}: empty file")
    points = np.zeros((len(rows), d))
    for r, feats in enumerate(rows):
        for idx, val in feats.items():
            points[r, idx - 1] = val
    labels, classes = _encode_labels(raw_labels)
    return Dataset(points, labels, len(classes), classes)


def load_csv(path, label_column=-1) -> Dataset:
    """Read a numeric CSV with a header row.

    ``label_column`` is a header name or a (possibly negative) column index.
    Label values may be arbitrary strings; they are remapped in sorted order.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        body = [row for row in reader if row]
    if not body:
        raise DataError(f"{path}: no data rows")
    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header")
        lc = header.index(label_column)
    else:
        lc = int(label_column)
        if not -len(header) <= lc < len(header):
            raise DataError(f"{path}: label column {lc} out of range")
        lc %= len(header)
    feat_cols = [c for c in range(len(header)) if c != lc]
    points = np.empty((len(body), len(feat_cols)))
    raw_labels = []
    for r, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}:{r + 2}: expected {len(header)} fields, got {len(row)}")
        try:
            points[r] = [float(row[c]) for c in feat_cols]
        except ValueError:
            raise DataError(f"{path}:{r + 2}: non-numeric feature value") from None
        tok = row[lc].strip()
        try:
            raw_labels.append(_as_number(tok))
        except ValueError:
            raw_labels.append(tok)
    if len({type(v) is str for v in raw_labels}) > 1:
        raw_labels = [str(v) for v in raw_labels]
    labels, classes = _encode_labels(raw_labels)
    return Dataset(points, labels, len(classes), classes,
                   tuple(header[c] for c in feat_cols))


def export_csv(ds: Dataset, path, label_name: str = "label") -> None:
    """Write ``ds`` as CSV, features first and the original label last.

    Floats are written with ``repr`` so that :func:`load_csv` reproduces the
    coordinates bit for bit.
    """
    names = ds.names or tuple(f"x{i + 1}" for i in range(ds.d))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*names, label_name])
        for row, lab in zip(ds.points, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [ds.classes[lab]])


def load_dataset(path, fmt: str | None = None, label_column=-1) -> Dataset:
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "libsvm"
    if fmt == "csv":
        return load_csv(path, label_column)
    if fmt == "libsvm":
        return load_libsvm(path)
    raise DataError(f"unknown format {fmt!r}")


@dataclass(frozen=True)
class MinMaxParams:
    """Per-feature affine map ``(v - lo) / span``; constant features map to 0."""

    lo: np.ndarray
    hi: np.ndarray

    @property
    def span(self) -> np.ndarray:
        span = self.hi - self.lo
        return np.where(span > 0, span, 1.0)

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = (X - self.lo) / self.span
        return np.where(self.hi > self.lo, out, 0.0)

    def inverse(self, U) -> np.ndarray:
        """Map normalized coordinates back; constant features return to their value."""
        return np.asarray(U, dtype=float) * self.span + self.lo

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, obj) -> MinMaxParams:
        return cls(np.asarray(obj["lo"], float), np.asarray(obj["hi"], float))


def normalize_minmax(ds: Dataset) -> tuple[Dataset, MinMaxParams]:
    """Map every feature of ``ds`` to [0, 1] and return the fitted parameters."""
    if ds.n < 2:
        raise DataError("normalization needs at least two points")
    params = MinMaxParams(ds.points.min(axis=0), ds.points.max(axis=0))
    meta = dict(ds.meta, normalization=params.to_dict())
    out = Dataset(params.apply(ds.points), ds.labels, ds.n_classes, ds.classes,
                  ds.names, meta)
    return out, params


def jitter(ds: Dataset, magnitude: float = 1e-9, seed: int = 0,
           max_retries: int = 10) -> Dataset:
    """Perturb every coordinate by U[-magnitude, magnitude] noise.

    Breaks cocircular configurations and duplicated rows.  Raises
    :class:`DataError` if points still coincide after ``max_retries`` draws.
    """
    if magnitude < 0:
        raise DataError("jitter magnitude must be non-negative")
    if magnitude == 0:
        return ds
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        pts = ds.points + rng.uniform(-magnitude, magnitude, size=ds.points.shape)
        if ds.n < 2 or _min_pairwise(pts) > 0:
            return Dataset(pts, ds.labels, ds.n_classes, ds.classes, ds.names,
                           dict(ds.meta))
    raise DataError(f"points still coincide after {max_retries} jitter draws")


def _min_pairwise(pts: np.ndarray) -> float:
    if pts.shape[0] <= 4000:
        return float(pdist(pts).min())
    # large sets: exact duplicates are the only realistic collision
    uniq = np.unique(pts, axis=0)
    return 1.0 if uniq.shape[0] == pts.shape[0] else 0.0


def gen_gaussian(n: int, d: int, alpha: float, seed: int = 0) -> Dataset:
    """Two isotropic unit-variance Gaussians centred at ``+alpha*e1`` (class 0)
    and ``-alpha*e1`` (class 1), ``n // 2`` samples each."""
    if n <= 0 or n % 2:
        raise DataError("n must be a positive even number")
    if d < 1:
        raise DataError("d must be at least 1")
    if alpha <= 0:
        raise DataError("alpha must be positive")
    rng = np.random.default_rng(seed)
    half = n // 2
    X = rng.standard_normal((n, d))
    X[:half, 0] += alpha
    X[half:, 0] -= alpha
    y = np.repeat([0, 1], half)
    meta = {"generator": "gaussian", "alpha": float(alpha), "n": n, "d": d, "seed": seed}
    return Dataset(X, y, 2, (0, 1), None, meta)


@dataclass(frozen=True)
class SplitSpec:
    seed: int = 0
    num_test: int = 100
    num_train: int | None = None


def split(ds: Dataset, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Seeded uniform split into disjoint (train, test) index arrays.

    Test indices are drawn first; the generators are the remainder, optionally
    subsampled to ``spec.num_train``.
    """
    if not 0 < spec.num_test < ds.n:
        raise DataError(f"num_test must be in 1..{ds.n - 1}")
    perm = np.random.default_rng(spec.seed).permutation(ds.n)
    test, train = perm[:spec.num_test], perm[spec.num_test:]
    if spec.num_train is not None:
        train = train[:spec.num_train]
    return np.sort(train), test
