"""Data ingestion, splits, synthetic sampling and result persistence.

Randomness comes from Philox4x64-10 (``numpy.random.Philox``) keyed by
``(seed, stream)``.  Shuffles and draws use only the raw 64-bit outputs, so
they can be reproduced outside numpy:

* a shuffle of ``N`` rows is the stable argsort of ``N`` raw words;
* a uniform double is ``(word >> 11) * 2**-53``.

Cache file layout (little-endian): ``b"BDRD"``, version ``u32``, row count
``u64``, column count ``u32``, features as ``f64`` row-major, labels as
``u8``, then a ``u32`` byte length and that many bytes of UTF-8 JSON
provenance.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .distributions import SamplePoint

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
CACHE_MAGIC = b"BDRD"
CACHE_VERSION = 1
DATA_ENV = "BDR_DATA_DIR"
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
_U53 = 2.0 ** -53


class DataError(Exception):
    pass


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


class DataMissingError(DataError, FileNotFoundError):
    pass


def philox(seed: int, stream: int = 0) -> np.random.Philox:
    if not 0 <= seed < 2 ** 64 or not 0 <= stream < 2 ** 64:
        raise DataError("seed and stream must be unsigned 64-bit integers")
    return np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))


def raw_words(seed: int, stream: int, count: int) -> np.ndarray:
    return philox(seed, stream).random_raw(count).astype(np.uint64)


def uniforms(seed: int, stream: int, count: int) -> np.ndarray:
    return (raw_words(seed, stream, count) >> np.uint64(11)).astype(np.float64) * _U53


def shuffle_order(n: int, seed: int, stream: int = 0) -> np.ndarray:
    return np.argsort(raw_words(seed, stream, n), kind="stable")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        F = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels)
        if F.ndim != 2 or y.shape != (F.shape[0],):
            raise DataError(f"features {F.shape} do not match labels {y.shape}")
        if F.size and (F.min() < 0 or F.max() > 1):
            raise DataError("feature entries must lie in [0, 1]")
        if y.size and (y.min() < 0 or y.max() > 9):
            raise DataError("labels must be digits 0..9")
        F.setflags(write=False)
        y = y.astype(np.uint8)
        y.setflags(write=False)
        object.__setattr__(self, "features", F)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.size


@dataclass(frozen=True)
class BinaryTask:
    positive_digit: int
    negative_digit: int
    train_idx: np.ndarray
    train_y: np.ndarray
    test_idx: np.ndarray
    test_y: np.ndarray

    def __post_init__(self):
        for name in ("train_idx", "train_y", "test_idx", "test_y"):
            a = np.array(getattr(self, name), dtype=np.int64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.intersect1d(self.train_idx, self.test_idx).size:
            raise DataError("train and test rows overlap")
        if self.train_idx.shape != self.train_y.shape or self.test_idx.shape != self.test_y.shape:
            raise DataError("index and label lists differ in length")

    @property
    def size(self) -> int:
        return self.train_idx.size + self.test_idx.size

    def arrays(self, ds: Dataset):
        """(train features, train labels, test features, test labels)."""
        return (ds.features[self.train_idx], self.train_y,
                ds.features[self.test_idx], self.test_y)


def _open(path):
    path = Path(path)
    if not path.exists():
        raise DataMissingError(f"missing data file {path}")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _digest(*blobs: bytes) -> str:
    h = hashlib.sha256()
    for b in blobs:
        h.update(b)
    return h.hexdigest()


def _parse_idx(data: bytes, magic: int, ndim: int, what: str):
    header = 4 + 4 * ndim
    if len(data) < 4:
        raise TruncatedFileError(f"{what}: {len(data)} bytes, no header")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise BadMagicError(f"{what}: magic 0x{got:08x}, expected 0x{magic:08x}")
    if len(data) < header:
        raise TruncatedFileError(f"{what}: header cut short")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    need = header + math.prod(dims)
    if len(data) < need:
        raise TruncatedFileError(f"{what}: {len(data)} bytes, header promises {need}")
    body = np.frombuffer(data, dtype=np.uint8, count=math.prod(dims), offset=header)
    return dims, body


def load_idx(images_path, labels_path) -> Dataset:
    img_bytes, lab_bytes = _open(images_path), _open(labels_path)
    dims, pixels = _parse_idx(img_bytes, IMAGES_MAGIC, 3, str(images_path))
    (count,), labels = _parse_idx(lab_bytes, LABELS_MAGIC, 1, str(labels_path))
    if dims[0] != count:
        raise CountMismatchError(f"{dims[0]} images but {count} labels")
    if labels.size and labels.max() > 9:
        raise DataError(f"{labels_path}: label {labels.max()} is not a digit")
    feats = pixels.reshape(dims[0], dims[1] * dims[2]).astype(np.float64) / 255.0
    prov = {"source": [str(images_path), str(labels_path)],
            "sha256": _digest(img_bytes, lab_bytes)}
    return Dataset(feats, labels, prov)


def write_idx(images_path, labels_path, pixels, labels):
    """Write uint8 images (N x rows x cols) and labels in IDX format."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IMAGES_MAGIC, *pixels.shape))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


def data_dir(explicit=None) -> Path:
    return Path(explicit or os.environ.get(DATA_ENV) or "data")


def expected_paths(directory=None) -> list:
    d = data_dir(directory)
    return [d / name for pair in MNIST_FILES.values() for name in pair]


def _resolve(d: Path, name: str) -> Optional[Path]:
    for cand in (d / name, d / (name + ".gz")):
        if cand.exists():
            return cand
    return None


def load_mnist(directory=None) -> Dataset:
    """Train and test pools merged into one dataset, train rows first."""
    d = data_dir(directory)
    found = {k: [_resolve(d, n) for n in names] for k, names in MNIST_FILES.items()}
    if any(p is None for pair in found.values() for p in pair):
        listing = ", ".join(str(p) for p in expected_paths(d))
        raise DataMissingError(
            f"MNIST IDX files not found in {d}. Expected (optionally .gz): {listing}. "
            f"Set {DATA_ENV} to the directory holding them.")
    parts = [load_idx(*found[k]) for k in ("train", "test")]
    prov = {"source": [s for p in parts for s in p.provenance["source"]],
            "sha256": [p.provenance["sha256"] for p in parts]}
    return Dataset(np.vstack([p.features for p in parts]),
                   np.concatenate([p.labels for p in parts]), prov)


def make_binary_task(ds: Dataset, pos: int, neg: int, train_fraction: float = 0.8,
                     seed: int = 0) -> BinaryTask:
    if pos == neg:
        raise DataError("positive and negative digits must differ")
    if not 0 < train_fraction < 1:
        raise DataError("train_fraction must lie in (0, 1)")
    for d in (pos, neg):
        if not np.any(ds.labels == d):
            raise DataError(f"digit {d} does not occur in the dataset")
    rows = np.flatnonzero((ds.labels == pos) | (ds.labels == neg))
    rows = rows[shuffle_order(rows.size, seed, stream=1)]
    y = np.where(ds.labels[rows] == pos, 1, -1)
    k = int(round(train_fraction * rows.size))
    return BinaryTask(pos, neg, rows[:k], y[:k], rows[k:], y[k:])


def _per_class(idx, y, count, seed, stream, what):
    keep = []
    for lab in (1, -1):
        mine = np.flatnonzero(y == lab)
        if count > mine.size:
            raise DataError(f"{what}: {count} rows of class {lab:+d} requested, "
                            f"{mine.size} available")
        keep.append(mine[shuffle_order(mine.size, seed, stream)[:count]])
    sel = np.sort(np.concatenate(keep))
    return idx[sel], y[sel]


def subsample(task: BinaryTask, per_class: int, seed: int = 0,
              test_per_class: Optional[int] = None) -> BinaryTask:
    """``per_class`` train rows per label; test rows likewise when asked."""
    if per_class < 1 or (test_per_class is not None and test_per_class < 1):
        raise DataError("per-class counts must be positive")
    tr = _per_class(task.train_idx, task.train_y, per_class, seed, 2, "train")
    te = (task.test_idx, task.test_y) if test_per_class is None else \
        _per_class(task.test_idx, task.test_y, test_per_class, seed, 3, "test")
    return BinaryTask(task.positive_digit, task.negative_digit, *tr, *te)


class SyntheticSampler:
    """I.i.d. draws from a finite distribution on 1-D atoms."""

    def __init__(self, atoms: Sequence[float], weights: Sequence[float], seed: int = 0):
        w = np.asarray(weights, dtype=float)
        a = np.asarray(atoms, dtype=float)
        if a.ndim != 1 or w.shape != a.shape or a.size == 0:
            raise DataError("atoms and weights must be equal-length 1-D sequences")
        if np.any(w < 0) or abs(math.fsum(w) - 1) > 1e-12:
            raise DataError("weights must form a probability vector")
        self.atoms, self.weights, self.seed = a, w, seed
        cdf = np.cumsum(w)
        cdf[-1] = 1.0
        self._cdf = cdf

    def indices(self, count: int, stream: int = 0) -> np.ndarray:
        u = uniforms(self.seed, stream, count)
        return np.minimum(np.searchsorted(self._cdf, u, side="right"), self.atoms.size - 1)

    def draw(self, count: int, stream: int = 0) -> np.ndarray:
        return self.atoms[self.indices(count, stream)]

    def stream(self, stream: int = 0, chunk: int = 4096) -> Iterator[SamplePoint]:
        bg = philox(self.seed, stream)
        while True:
            u = (bg.random_raw(chunk).astype(np.uint64) >> np.uint64(11)).astype(float) * _U53
            idx = np.minimum(np.searchsorted(self._cdf, u, side="right"), self.atoms.size - 1)
            for v in self.atoms[idx]:
                yield SamplePoint((float(v),))


def synthetic_sampler(spec: dict) -> SyntheticSampler:
    return SyntheticSampler(spec["atoms"], spec["weights"], int(spec.get("seed", 0)))


def synthetic_digits(per_digit: int, seed: int = 0, digits=range(10), side: int = 28,
                     noise: float = 0.9) -> Dataset:
    """Stand-in for MNIST: one random prototype image per digit plus noise.

    Only for exercising the pipeline when the real files are absent.
    """
    digits = list(digits)
    dims = side * side
    protos = uniforms(seed, 10, len(digits) * dims).reshape(len(digits), dims)
    protos = (protos > 0.6).astype(float)
    u = uniforms(seed, 11, len(digits) * per_digit * dims).reshape(-1, dims)
    base = np.repeat(protos, per_digit, axis=0)
    feats = np.clip(base * (1 - noise) + noise * u, 0.0, 1.0)
    labels = np.repeat(np.array(digits, dtype=np.uint8), per_digit)
    return Dataset(feats, labels, {"source": "synthetic", "seed": seed, "per_digit": per_digit})


def write_cache(ds: Dataset, path):
    n, dims = ds.features.shape
    prov = json.dumps(ds.provenance, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<IQI", CACHE_VERSION, n, dims))
        fh.write(ds.features.astype("<f8").tobytes())
        fh.write(ds.labels.astype(np.uint8).tobytes())
        fh.write(struct.pack("<I", len(prov)))
        fh.write(prov)


def read_cache(path) -> Dataset:
    data = _open(path)
    if data[:4] != CACHE_MAGIC:
        raise BadMagicError(f"{path}: not a BDRD cache file")
    if len(data) < 20:
        raise TruncatedFileError(f"{path}: header cut short")
    version, n, dims = struct.unpack("<IQI", data[4:20])
    if version != CACHE_VERSION:
        raise DataError(f"{path}: cache version {version} unsupported")
    off = 20
    end = off + 8 * n * dims + n + 4
    if len(data) < end:
        raise TruncatedFileError(f"{path}: body cut short")
    feats = np.frombuffer(data, dtype="<f8", count=n * dims, offset=off).reshape(n, dims)
    off += 8 * n * dims
    labels = np.frombuffer(data, dtype=np.uint8, count=n, offset=off)
    off += n
    (plen,) = struct.unpack("<I", data[off:off + 4])
    if len(data) < off + 4 + plen:
        raise TruncatedFileError(f"{path}: provenance cut short")
    prov = json.loads(data[off + 4:off + 4 + plen].decode())
    return Dataset(feats.astype(np.float64), labels, prov)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_csv(path, header: Sequence[str], rows):
    """Rows are dicts keyed by ``header`` or sequences in header order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            vals = [r[h] for h in header] if isinstance(r, dict) else list(r)
            w.writerow([_fmt(v) for v in vals])


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    return o


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
