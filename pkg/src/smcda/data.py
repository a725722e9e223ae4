"""IDX ingestion, synthetic datasets and fixed-permutation prefix views."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import STREAM_DATA, STREAM_PERMUTE, DomainError, RngStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    """Aligned features/labels plus the run's fixed visiting order.

    ``ordered_features`` / ``ordered_labels`` are the arrays re-indexed by
    ``permutation`` so that every subset window is a contiguous slice.
    """

    features: np.ndarray
    labels: np.ndarray
    permutation: np.ndarray | None = None
    image_shape: tuple[int, int] | None = None
    ordered_features: np.ndarray = field(init=False, repr=False)
    ordered_labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        n = self.features.shape[0]
        if self.labels.shape[0] != n:
            raise DomainError(f"{n} feature rows but {self.labels.shape[0]} labels")
        if self.permutation is None:
            self.permutation = np.arange(n)
        perm = np.asarray(self.permutation, dtype=np.int64)
        if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
            raise DomainError("permutation must be a bijection on [0, n)")
        self.permutation = perm
        self.ordered_features = np.ascontiguousarray(self.features[perm])
        self.ordered_labels = self.labels[perm]

    def __len__(self):
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def with_permutation(self, perm) -> Dataset:
        return Dataset(self.features, self.labels, perm, self.image_shape)

    def shuffled(self, r: RngStream) -> Dataset:
        return self.with_permutation(r.child(STREAM_PERMUTE).generator.permutation(self.n))

    def head(self, n: int) -> Dataset:
        return Dataset(self.features[:n], self.labels[:n], image_shape=self.image_shape)


@dataclass(frozen=True)
class SubsetWindow:
    """Datapoints ``[0, prefix_end)`` are annealed in; ``[prefix_end, block_end)`` is the newest block."""

    prefix_end: int
    block_end: int
    total_n: int

    def __post_init__(self):
        if not 0 <= self.prefix_end <= self.block_end <= self.total_n:
            raise DomainError(
                f"window needs 0 <= prefix_end <= block_end <= total_n, got "
                f"({self.prefix_end}, {self.block_end}, {self.total_n})"
            )


def subset_window_view(d: Dataset, w: SubsetWindow):
    """Return ``((prefix_x, prefix_y), (block_x, block_y))`` as views in the run order."""
    if w.block_end > d.n:
        raise DomainError(f"window end {w.block_end} exceeds dataset size {d.n}")
    if w.block_end == 0:
        raise DomainError("empty subset window")
    X, y = d.ordered_features, d.ordered_labels
    return (
        (X[: w.prefix_end], y[: w.prefix_end]),
        (X[w.prefix_end : w.block_end], y[w.prefix_end : w.block_end]),
    )


# IDX format


def _read_header(buf: bytes, what: str, magic: int, ndim: int):
    need = 4 + 4 * ndim
    if len(buf) < 4:
        raise IdxFormatError(f"{what}: truncated magic number at offset 0")
    (got,) = struct.unpack_from(">I", buf, 0)
    if got != magic:
        raise IdxFormatError(f"{what}: magic number at offset 0 is 0x{got:08x}, expected 0x{magic:08x}")
    if len(buf) < need:
        raise IdxFormatError(f"{what}: truncated dimension sizes at offset 4")
    return struct.unpack_from(">" + "I" * ndim, buf, 4), need


def parse_idx(image_bytes: bytes, label_bytes: bytes) -> Dataset:
    """Parse IDX image/label byte streams (gzip streams are detected and inflated)."""
    image_bytes = _maybe_gunzip(image_bytes)
    label_bytes = _maybe_gunzip(label_bytes)
    (n, rows, cols), off = _read_header(image_bytes, "images", IDX_IMAGES_MAGIC, 3)
    (n_labels,), loff = _read_header(label_bytes, "labels", IDX_LABELS_MAGIC, 1)
    if n != n_labels:
        raise IdxFormatError(f"count mismatch: images header (offset 4) says {n}, labels header (offset 4) says {n_labels}")
    size = n * rows * cols
    if len(image_bytes) - off < size:
        raise IdxFormatError(f"images: truncated payload at offset {len(image_bytes)}, expected {off + size} bytes")
    if len(label_bytes) - loff < n:
        raise IdxFormatError(f"labels: truncated payload at offset {len(label_bytes)}, expected {loff + n} bytes")
    pixels = np.frombuffer(image_bytes, dtype=np.uint8, count=size, offset=off)
    labels = np.frombuffer(label_bytes, dtype=np.uint8, count=n, offset=loff).astype(np.int64)
    return Dataset(pixels.reshape(n, rows * cols) / 255.0, labels, image_shape=(rows, cols))


def serialize_idx(d: Dataset, image_shape=None) -> tuple[bytes, bytes]:
    """Inverse of :func:`parse_idx` (features rescaled to bytes, original order)."""
    n, p = d.features.shape
    rows, cols = image_shape or d.image_shape or (p, 1)
    if rows * cols != p:
        raise DomainError(f"image shape {rows}x{cols} does not match {p} features")
    pixels = np.rint(d.features * 255.0)
    if pixels.min() < 0 or pixels.max() > 255:
        raise DomainError("features outside [0, 1] cannot be written as IDX bytes")
    images = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.astype(np.uint8).tobytes()
    labels = struct.pack(">II", IDX_LABELS_MAGIC, n) + np.asarray(d.labels, dtype=np.uint8).tobytes()
    return images, labels


def _maybe_gunzip(b: bytes) -> bytes:
    return gzip.decompress(b) if b[:2] == b"\x1f\x8b" else b


def load_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    ds = parse_idx(Path(images_path).read_bytes(), Path(labels_path).read_bytes())
    return ds.head(limit) if limit is not None and limit < ds.n else ds


def write_idx(d: Dataset, images_path, labels_path, image_shape=None, compress=None) -> None:
    images, labels = serialize_idx(d, image_shape)
    for path, payload in ((images_path, images), (labels_path, labels)):
        path = Path(path)
        gz = compress if compress is not None else path.suffix == ".gz"
        # mtime=0 keeps the compressed bytes reproducible
        path.write_bytes(gzip.compress(payload, mtime=0) if gz else payload)


# synthetic datasets


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    cov: np.ndarray


SYNTHETIC_KINDS = ("gaussian_blobs", "two_moons", "linear_gaussian")


def make_synthetic(kind: str, n: int, noise: float = 0.1, seed: int = 0, *,
                   dim: int = 2, classes: int = 3, prior_sigma: float = 1.0):
    """Generate a reproducible toy dataset.

    ``linear_gaussian`` returns ``(dataset, GaussianPosterior)``: targets are
    ``x . w + noise * eps`` with ``w`` drawn from the prior, and the returned
    posterior is the exact conjugate one under ``N(0, prior_sigma^2 I)``.
    The classification kinds return only the dataset.
    """
    if n < 2:
        raise DomainError("synthetic datasets need n >= 2")
    gen = RngStream(seed).child(STREAM_DATA).generator
    if kind == "two_moons":
        n_out = n // 2
        n_in = n - n_out
        t_out = np.linspace(0, np.pi, n_out)
        t_in = np.linspace(0, np.pi, n_in)
        X = np.concatenate([
            np.column_stack([np.cos(t_out), np.sin(t_out)]),
            np.column_stack([1 - np.cos(t_in), 1 - np.sin(t_in) - 0.5]),
        ])
        y = np.concatenate([np.zeros(n_out, np.int64), np.ones(n_in, np.int64)])
        if noise > 0:
            X = X + noise * gen.standard_normal(X.shape)
        return Dataset(X, y)
    if kind == "gaussian_blobs":
        centers = 3.0 * gen.standard_normal((classes, dim))
        y = np.arange(n) % classes
        X = centers[y] + max(noise, 0.0) * gen.standard_normal((n, dim))
        return Dataset(X, y)
    if kind == "linear_gaussian":
        if not noise > 0:
            raise DomainError("linear_gaussian needs a positive noise scale")
        X = gen.standard_normal((n, dim))
        w_true = prior_sigma * gen.standard_normal(dim)
        yv = X @ w_true + noise * gen.standard_normal(n)
        return Dataset(X, yv), linear_gaussian_posterior(X, yv, noise, prior_sigma)
    raise DomainError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")


def linear_gaussian_posterior(X, y, noise_sd: float, prior_sigma: float) -> GaussianPosterior:
    precision = np.eye(X.shape[1]) / prior_sigma**2 + X.T @ X / noise_sd**2
    cov = np.linalg.inv(precision)
    return GaussianPosterior(cov @ (X.T @ y) / noise_sd**2, cov)
