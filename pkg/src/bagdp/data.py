"""Dataset container, CSV/IDX ingestion and a synthetic blob generator."""

from __future__ import annotations

import csv
import gzip
import struct
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DatasetParseError, InvalidArgumentError
from .learners import LabeledExample

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class Dataset(Sequence[LabeledExample]):
    """Array-backed sequence of labeled examples.

    Indexing by an integer materialises one ``LabeledExample``; slicing
    returns another ``Dataset``.
    """

    def __init__(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
            raise InvalidArgumentError("dataset", f"shape mismatch: X{X.shape} vs y{y.shape}")
        if len(y) and y.min() < 0:
            raise InvalidArgumentError("label", "labels must be non-negative")
        self.X = X
        self.y = y

    @classmethod
    def from_examples(cls, examples: Sequence[LabeledExample]) -> "Dataset":
        if isinstance(examples, Dataset):
            return examples
        if len(examples) == 0:
            return cls(np.empty((0, 0)), np.empty(0, dtype=np.int64))
        widths = {len(e.features) for e in examples}
        if len(widths) != 1:
            raise InvalidArgumentError("features", f"inconsistent feature widths {sorted(widths)}")
        return cls([e.features for e in examples], [e.label for e in examples])

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return Dataset(self.X[index], self.y[index])
        return LabeledExample(tuple(self.X[index].tolist()), int(self.y[index]))

    def __iter__(self) -> Iterator[LabeledExample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def head(self, n: int) -> "Dataset":
        """First ``n`` rows; fails rather than silently returning fewer."""
        if n > len(self):
            raise InvalidArgumentError("limit_n", f"requested {n} rows but dataset has {len(self)}")
        return self[:n]


def as_arrays(examples) -> tuple[np.ndarray, np.ndarray]:
    ds = Dataset.from_examples(examples)
    return ds.X, ds.y


# ---------------------------------------------------------------- CSV

def read_csv(path: str | Path) -> Dataset:
    """Header row required; last column ``label`` (integer), the rest real features."""
    path = str(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DatasetParseError(path, "open", str(exc)) from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError(path, "line 1", "empty file, expected a header row") from None
        if not header or header[-1].strip() != "label":
            raise DatasetParseError(path, "line 1", "last header column must be 'label'")
        width = len(header) - 1
        rows, labels = [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != width + 1:
                raise DatasetParseError(path, f"line {line}", f"expected {width + 1} cells, got {len(row)}")
            try:
                feats = [float(c) for c in row[:-1]]
            except ValueError:
                bad = next(c for c in row[:-1] if not _is_float(c))
                raise DatasetParseError(path, f"line {line}", f"non-numeric cell {bad!r}") from None
            try:
                label = int(row[-1])
            except ValueError:
                raise DatasetParseError(path, f"line {line}", f"non-integer label {row[-1]!r}") from None
            if label < 0:
                raise DatasetParseError(path, f"line {line}", f"negative label {label}")
            rows.append(feats)
            labels.append(label)
    X = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    return Dataset(X, np.array(labels, dtype=np.int64))


def _is_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def write_csv(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(dataset.n_features)] + ["label"])
        for x, y in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


# ---------------------------------------------------------------- IDX

def _read_bytes(path: str) -> bytes:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetParseError(path, "open", str(exc)) from exc
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(path: str, raw: bytes, magic: int, ndim: int) -> tuple[tuple[int, ...], bytes]:
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DatasetParseError(path, "byte 0", f"truncated header ({len(raw)} bytes)")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise DatasetParseError(path, "byte 0", f"magic 0x{found:08x} != expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = int(np.prod(dims))
    payload = raw[header:]
    if len(payload) < need:
        raise DatasetParseError(
            path, f"byte {header + len(payload)}", f"truncated payload: need {need} bytes, have {len(payload)}"
        )
    return dims, payload[:need]


def read_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Standard big-endian IDX image/label pair (optionally gzipped).

    Pixels are unsigned bytes scaled to [0, 1].
    """
    images_path, labels_path = str(images_path), str(labels_path)
    (count, rows, cols), pix = _parse_idx(images_path, _read_bytes(images_path), IMAGE_MAGIC, 3)
    (n_labels,), lab = _parse_idx(labels_path, _read_bytes(labels_path), LABEL_MAGIC, 1)
    if count != n_labels:
        raise DatasetParseError(
            labels_path, "byte 4", f"image count {count} does not match label count {n_labels}"
        )
    X = np.frombuffer(pix, dtype=np.uint8).reshape(count, rows * cols).astype(np.float64) / 255.0
    y = np.frombuffer(lab, dtype=np.uint8).astype(np.int64)
    return Dataset(X, y)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, *images.shape) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.tobytes())


def ingest_dataset(path: str | Path, format: str = "csv", labels_path: str | Path | None = None) -> Dataset:
    if format == "csv":
        return read_csv(path)
    if format == "idx":
        if labels_path is None:
            raise InvalidArgumentError("labels_path", "IDX ingestion needs an image file and a label file")
        return read_idx(path, labels_path)
    raise InvalidArgumentError("format", f"unknown format {format!r}; choose csv or idx")


# ---------------------------------------------------------------- synthetic

def make_blobs(
    n: int,
    n_classes: int = 10,
    n_features: int = 20,
    spread: float = 2.5,
    seed: int = 0,
    draw: int = 0,
) -> Dataset:
    """Deterministic Gaussian blobs with balanced labels ``i % n_classes``.

    Class centres depend on ``seed`` only; ``draw`` selects an independent
    sample from the same classes (e.g. 0 for training, 1 for testing).
    Centres have per-coordinate scale 2, noise has scale ``spread``.
    """
    centre_rng = np.random.default_rng([seed, 0])
    centres = centre_rng.normal(0.0, 1.0, size=(n_classes, n_features)) * 2.0
    rng = np.random.default_rng([seed, 1, draw])
    y = np.arange(n) % n_classes
    rng.shuffle(y)
    X = centres[y] + rng.normal(0.0, spread, size=(n, n_features))
    return Dataset(X, y)
