"""Dataset ingestion: IDX binary parsing, box resampling, splits and batching.

IDX files are the standard big-endian MNIST/Fashion-MNIST distribution format;
gzipped files (the usual *-ubyte.gz form) are handled transparently. Pixels
are scaled to [0, 1] as byte / 255 with no further normalization, since the
values feed directly into amplitude or phase encoding.
"""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataConsistencyError, EmptySplitError, FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    images: np.ndarray  # (N, n, n) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64 in 0..9
    name: str = ""

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DataConsistencyError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() > 9):
            raise DataConsistencyError("labels must lie in 0..9")
        if len(self.images) and (self.images.min() < 0 or self.images.max() > 1):
            raise DataConsistencyError("image pixels must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    def subset(self, index):
        return Dataset(self.images[index], self.labels[index], self.name)


def _read_bytes(path):
    with open(path, "rb") as f:
        head = f.read(2)
        f.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(f) as g:
                return g.read()
        return f.read()


def _parse_idx(raw, path, expected_magic, ndim):
    header = 4 * (1 + ndim)
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise FormatError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    count = int(np.prod(dims))
    if len(raw) < header + count:
        raise FormatError(f"{path}: truncated payload at byte {len(raw)}, need {header + count}")
    return np.frombuffer(raw, np.uint8, count, header).reshape(dims)


def load_idx(images_path, labels_path):
    """Parse an IDX image/label file pair into a Dataset (pixels scaled /255)."""
    images = _parse_idx(_read_bytes(images_path), images_path, IMAGE_MAGIC, 3)
    labels = _parse_idx(_read_bytes(labels_path), labels_path, LABEL_MAGIC, 1)
    if len(images) != len(labels):
        raise DataConsistencyError(
            f"{images_path} has {len(images)} images but {labels_path} has "
            f"{len(labels)} labels"
        )
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64))


def _box_weights(n_in, n_out):
    """Row-stochastic overlap matrix of 1D box (area-weighted) resampling."""
    w = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, n_in)):
            w[i, j] = min(hi, j + 1) - max(lo, j)
    return w / scale


def resample(image, grid_n):
    """Area-weighted (box) resampling of (..., h, w) images to grid_n x grid_n."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-2:]
    if (h, w) == (grid_n, grid_n):
        return image.copy()
    wr = _box_weights(h, grid_n)
    wc = _box_weights(w, grid_n)
    out = np.matmul(np.matmul(wr, image), wc.T)
    return np.clip(out, 0.0, 1.0)


def resample_dataset(dataset, grid_n):
    return Dataset(resample(dataset.images, grid_n), dataset.labels, dataset.name)


@dataclass
class BatchStreams:
    """Deterministic train/val/test splits with per-epoch batch streams."""

    train: Dataset
    val: Dataset
    test: Dataset
    batch_size: int
    seed: int

    def train_batches(self, epoch=0):
        """Shuffled with seed + epoch; partitions the split exactly once."""
        if len(self.train) == 0:
            raise EmptySplitError("train split is empty")
        order = np.random.default_rng(self.seed + epoch).permutation(len(self.train))
        for lo in range(0, len(order), self.batch_size):
            idx = order[lo : lo + self.batch_size]
            yield self.train.images[idx], self.train.labels[idx]

    def test_batches(self):
        """Never shuffled."""
        if len(self.test) == 0:
            raise EmptySplitError("test split is empty")
        for lo in range(0, len(self.test), self.batch_size):
            yield (
                self.test.images[lo : lo + self.batch_size],
                self.test.labels[lo : lo + self.batch_size],
            )


def split_and_batch(dataset, fractions, batch_size, seed):
    """Split by seeded permutation into train/val/test batch streams."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataConsistencyError(f"fractions {fractions} do not sum to 1")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_train = round(fractions[0] * n)
    n_val = round(fractions[1] * n)
    train = dataset.subset(order[:n_train])
    val = dataset.subset(order[n_train : n_train + n_val])
    test = dataset.subset(order[n_train + n_val :])
    return BatchStreams(train, val, test, batch_size, seed)


def synthetic_two_blob(n, grid_n, seed):
    """Balanced 2-class toy set: a Gaussian blob on the left or right half."""
    if n < 2:
        raise DataConsistencyError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:grid_n, 0:grid_n]
    images = np.empty((n, grid_n, grid_n))
    labels = np.empty(n, dtype=np.int64)
    sigma = grid_n / 10.0
    for i in range(n):
        label = i % 2
        cx = grid_n * (0.25 if label == 0 else 0.75) + rng.normal(0, grid_n / 25.0)
        cy = grid_n * 0.5 + rng.normal(0, grid_n / 25.0)
        images[i] = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma**2))
        labels[i] = label
    return Dataset(np.clip(images, 0.0, 1.0), labels, name="two_blob")


# --- cache format ----------------------------------------------------------

_CACHE_MAGIC = b"D2DS"
_CACHE_VERSION = 1


def serialize_dataset(dataset):
    """Versioned little-endian binary; parse(serialize(d)) == d exactly."""
    name = dataset.name.encode()
    n, gn = len(dataset), dataset.images.shape[-1] if len(dataset) else 0
    parts = [
        _CACHE_MAGIC,
        struct.pack("<IcIII", _CACHE_VERSION, b"<", n, gn, len(name)),
        name,
        dataset.images.astype("<f8").tobytes(),
        dataset.labels.astype("<i8").tobytes(),
    ]
    return b"".join(parts)


def parse_dataset(raw):
    if raw[:4] != _CACHE_MAGIC:
        raise FormatError(f"bad cache magic {raw[:4]!r}")
    version, endian, n, gn, name_len = struct.unpack_from("<IcIII", raw, 4)
    if version != _CACHE_VERSION or endian != b"<":
        raise FormatError(f"unsupported cache version {version}/{endian!r}")
    off = 4 + 17
    name = raw[off : off + name_len].decode()
    off += name_len
    images = np.frombuffer(raw, "<f8", n * gn * gn, off).reshape(n, gn, gn).copy()
    off += n * gn * gn * 8
    labels = np.frombuffer(raw, "<i8", n, off).copy()
    return Dataset(images, labels, name)
