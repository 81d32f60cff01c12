"""Dataset ingestion (IDX files), class partitioning, and report emission.

CSV output uses 17 significant digits so float64 values round-trip exactly;
SVG output is a minimal standalone line chart. IDX files may be gzipped;
the reader sniffs the gzip magic.
"""

from __future__ import annotations

import gzip
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .rng import spawn_rng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

MNIST_ENV_VAR = "MNIST_DIR"
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxFormatError(ValueError):
    """Malformed IDX container; `kind` is one of magic/truncated/dimensions."""

    def __init__(self, message: str, kind: str):
        super().__init__(message)
        self.kind = kind


def _open_idx(path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(f, n: int, offset: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise IdxFormatError(
            f"truncated IDX file: wanted {n} bytes of {what} at offset {offset}, "
            f"got {len(data)}", kind="truncated")
    return data


def _read_u32(f, offset: int, what: str) -> int:
    return int.from_bytes(_read_exact(f, 4, offset, what), "big")


def read_idx_images(path) -> np.ndarray:
    """Parse an IDX image file into a (n, rows, cols) uint8 array."""
    with _open_idx(path) as f:
        magic = _read_u32(f, 0, "magic")
        if magic != IDX_IMAGE_MAGIC:
            raise IdxFormatError(
                f"bad image magic 0x{magic:08x} at offset 0, expected 0x{IDX_IMAGE_MAGIC:08x}",
                kind="magic")
        n = _read_u32(f, 4, "image count")
        rows = _read_u32(f, 8, "row count")
        cols = _read_u32(f, 12, "column count")
        if rows == 0 or cols == 0:
            raise IdxFormatError(
                f"degenerate image dimensions {rows}x{cols} in header", kind="dimensions")
        payload = _read_exact(f, n * rows * cols, 16, "pixel data")
        if f.read(1):
            raise IdxFormatError(
                f"trailing bytes after {n}x{rows}x{cols} pixels (offset {16 + len(payload)})",
                kind="dimensions")
    return np.frombuffer(payload, dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    """Parse an IDX label file into a (n,) uint8 array."""
    with _open_idx(path) as f:
        magic = _read_u32(f, 0, "magic")
        if magic != IDX_LABEL_MAGIC:
            raise IdxFormatError(
                f"bad label magic 0x{magic:08x} at offset 0, expected 0x{IDX_LABEL_MAGIC:08x}",
                kind="magic")
        n = _read_u32(f, 4, "label count")
        payload = _read_exact(f, n, 8, "label data")
        if f.read(1):
            raise IdxFormatError(
                f"trailing bytes after {n} labels (offset {8 + n})", kind="dimensions")
    return np.frombuffer(payload, dtype=np.uint8)


@dataclass
class LabeledDataset:
    """Features in [0, 1], integer labels, and per-class row indices."""

    features: np.ndarray
    labels: np.ndarray
    class_index: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.features.ndim != 2 or self.labels.shape != (n,):
            raise ValueError("features must be (n, d) with one label per row")
        if n and (self.features.min() < 0.0 or self.features.max() > 1.0):
            raise ValueError("feature values must lie in [0, 1]")
        if not self.class_index:
            n_classes = int(self.labels.max()) + 1 if n else 0
            self.class_index = [np.flatnonzero(self.labels == c) for c in range(n_classes)]
        covered = np.sort(np.concatenate([idx for idx in self.class_index])) \
            if self.class_index else np.array([], dtype=np.int64)
        if covered.size != n or (n and not np.array_equal(covered, np.arange(n))):
            raise ValueError("class_index must partition the rows exactly")
        for c, idx in enumerate(self.class_index):
            if np.any(self.labels[idx] != c):
                raise ValueError(f"class_index[{c}] points at rows of another label")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_index)

    def class_weights(self) -> np.ndarray:
        sizes = np.array([idx.size for idx in self.class_index], dtype=np.float64)
        return sizes / sizes.sum()


def to_dataset(images: np.ndarray, labels: np.ndarray) -> LabeledDataset:
    """Flatten images, scale bytes to [0, 1], and index the classes."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(features, labels.astype(np.int64))


def subsample(dataset: LabeledDataset, per_class: int, seed) -> LabeledDataset:
    """Stratified without-replacement subsample, per_class rows per class."""
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    keep = []
    for c, idx in enumerate(dataset.class_index):
        if per_class > idx.size:
            raise ValueError(f"class {c} has {idx.size} rows, cannot take {per_class}")
        rng = spawn_rng(seed, c)
        keep.append(np.sort(rng.choice(idx, size=per_class, replace=False)))
    rows = np.concatenate(keep)
    return LabeledDataset(dataset.features[rows], dataset.labels[rows])


def load_mnist_split(data_dir, split: str) -> LabeledDataset:
    """Load one MNIST-style split ('train' or 'test') from a directory.

    Accepts plain or .gz IDX files under the conventional names.
    """
    img_name, lbl_name = MNIST_FILES[split]
    data_dir = Path(data_dir)
    paths = []
    for name in (img_name, lbl_name):
        for candidate in (data_dir / name, data_dir / (name + ".gz")):
            if candidate.exists():
                paths.append(candidate)
                break
        else:
            raise FileNotFoundError(f"missing {name}[.gz] under {data_dir}")
    return to_dataset(read_idx_images(paths[0]), read_idx_labels(paths[1]))


def default_data_dir() -> Optional[str]:
    return os.environ.get(MNIST_ENV_VAR)


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path, columns: Mapping[str, Sequence]) -> None:
    """Write named equal-length series as CSV with stable formatting."""
    if not columns:
        raise ValueError("need at least one column")
    names = list(columns)
    lengths = {name: len(columns[name]) for name in names}
    if len(set(lengths.values())) != 1:
        raise ValueError(f"column lengths differ: {lengths}")
    n = lengths[names[0]]
    if n == 0:
        raise ValueError(f"refusing to write empty series to {path}")
    with open(path, "w", newline="") as f:
        f.write(",".join(names) + "\n")
        series = [columns[name] for name in names]
        for i in range(n):
            f.write(",".join(_format_cell(col[i]) for col in series) + "\n")


def read_csv_columns(path) -> dict[str, list[str]]:
    """Read a CSV written by :func:`write_csv` back into string columns."""
    with open(path, "r", newline="") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ValueError(f"{path} is empty")
    names = lines[0].split(",")
    out: dict[str, list[str]] = {name: [] for name in names}
    for line in lines[1:]:
        for name, cell in zip(names, line.split(",")):
            out[name].append(cell)
    return out


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def write_svg_lineplot(path, series: Mapping[str, Sequence[float]],
                       x: Optional[Sequence[float]] = None, title: str = "",
                       x_label: str = "", y_label: str = "") -> None:
    """Write a standalone SVG line chart with a legend.

    All series share one x axis (defaults to 1..n) and must have equal,
    non-zero length.
    """
    if not series:
        raise ValueError("need at least one series")
    lengths = {name: len(vals) for name, vals in series.items()}
    if len(set(lengths.values())) != 1:
        raise ValueError(f"series lengths differ: {lengths}")
    n = next(iter(lengths.values()))
    if n == 0:
        raise ValueError(f"refusing to plot empty series to {path}")
    xs = np.arange(1, n + 1, dtype=np.float64) if x is None else np.asarray(x, dtype=np.float64)
    if xs.size != n:
        raise ValueError("x must match the series length")

    width, height = 640, 400
    left, right, top, bottom = 60, 20, 30, 40
    ys_all = np.concatenate([np.asarray(v, dtype=np.float64) for v in series.values()])
    y_min, y_max = float(ys_all.min()), float(ys_all.max())
    if y_max == y_min:
        y_min -= 0.5
        y_max += 0.5
    x_min, x_max = float(xs.min()), float(xs.max())
    if x_max == x_min:
        x_min -= 0.5
        x_max += 0.5

    def sx(v):
        return left + (v - x_min) / (x_max - x_min) * (width - left - right)

    def sy(v):
        return height - bottom - (v - y_min) / (y_max - y_min) * (height - top - bottom)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" '
        f'y2="{height - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>',
    ]
    if title:
        parts.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" '
                     f'font-size="14">{escape(title)}</text>')
    if x_label:
        parts.append(f'<text x="{(left + width - right) / 2:.1f}" y="{height - 8}" '
                     f'text-anchor="middle" font-size="12">{escape(x_label)}</text>')
    if y_label:
        parts.append(f'<text x="14" y="{(top + height - bottom) / 2:.1f}" font-size="12" '
                     f'text-anchor="middle" '
                     f'transform="rotate(-90 14 {(top + height - bottom) / 2:.1f})">'
                     f'{escape(y_label)}</text>')
    for val, anchor, pos in ((x_min, "middle", sx(x_min)), (x_max, "middle", sx(x_max))):
        parts.append(f'<text x="{pos:.1f}" y="{height - bottom + 16}" text-anchor="{anchor}" '
                     f'font-size="11">{val:.4g}</text>')
    for val in (y_min, y_max):
        parts.append(f'<text x="{left - 6}" y="{sy(val) + 4:.1f}" text-anchor="end" '
                     f'font-size="11">{val:.4g}</text>')
    for i, (name, vals) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(float(px)):.2f},{sy(float(py)):.2f}"
                       for px, py in zip(xs, np.asarray(vals, dtype=np.float64)))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{pts}"/>')
        ly = top + 14 + 16 * i
        parts.append(f'<line x1="{width - 150}" y1="{ly - 4}" x2="{width - 130}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="3"/>')
        parts.append(f'<text x="{width - 124}" y="{ly}" font-size="12">{escape(name)}</text>')
    parts.append("</svg>")
    with open(path, "w", newline="") as f:
        f.write("\n".join(parts) + "\n")


def write_manifest(path, entries: Mapping) -> None:
    """Plain-text key=value run manifest; sequence values repeat the key."""
    with open(path, "w", newline="") as f:
        for key, value in entries.items():
            if isinstance(value, (list, tuple)):
                for item in value:
                    f.write(f"{key}={item}\n")
            else:
                f.write(f"{key}={value}\n")
