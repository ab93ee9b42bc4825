import gzip
import struct

import numpy as np
import pytest

from d2nn import data
from d2nn.errors import DataConsistencyError, EmptySplitError, FormatError

from conftest import data_path


def write_idx_pair(tmp_path, images, labels, image_magic=0x803, label_magic=0x801):
    images = np.asarray(images, dtype=np.uint8)
    ip = tmp_path / "images-idx3-ubyte"
    lp = tmp_path / "labels-idx1-ubyte"
    ip.write_bytes(
        struct.pack(">IIII", image_magic, *images.shape) + images.tobytes()
    )
    lp.write_bytes(struct.pack(">II", label_magic, len(labels)) + bytes(labels))
    return ip, lp


class TestLoadIdx:
    def test_parses_valid_pair(self, tmp_path, rng):
        images = rng.integers(0, 256, (10, 28, 28))
        labels = list(rng.integers(0, 10, 10))
        ip, lp = write_idx_pair(tmp_path, images, labels)
        ds = data.load_idx(ip, lp)
        assert len(ds) == 10
        assert np.array_equal(ds.labels, labels)

    def test_pixel_scaling(self, tmp_path):
        images = np.zeros((1, 28, 28), dtype=np.uint8)
        images[0, 0, 0] = 255
        images[0, 0, 1] = 128
        ip, lp = write_idx_pair(tmp_path, images, [3])
        ds = data.load_idx(ip, lp)
        assert ds.images[0, 0, 0] == 1.0
        assert ds.images[0, 1, 1] == 0.0
        assert abs(ds.images[0, 0, 1] - 128 / 255) < 1e-12

    def test_wrong_magic_named_in_error(self, tmp_path, rng):
        ip, lp = write_idx_pair(tmp_path, rng.integers(0, 256, (2, 28, 28)), [0, 1])
        with pytest.raises(FormatError, match="0x00000803"):
            data.load_idx(ip, ip)  # image file passed as labels

    def test_count_mismatch(self, tmp_path, rng):
        ip, _ = write_idx_pair(tmp_path, rng.integers(0, 256, (3, 28, 28)), [0, 1, 2])
        lp = tmp_path / "short-labels"
        lp.write_bytes(struct.pack(">II", 0x801, 2) + bytes([0, 1]))
        with pytest.raises(DataConsistencyError):
            data.load_idx(ip, lp)

    def test_truncated_file_reports_offset(self, tmp_path):
        ip = tmp_path / "trunc"
        ip.write_bytes(struct.pack(">IIII", 0x803, 10, 28, 28) + b"\x00" * 100)
        with pytest.raises(FormatError, match="byte"):
            data.load_idx(ip, ip)

    def test_gzip_transparent(self, tmp_path, rng):
        images = rng.integers(0, 256, (4, 28, 28)).astype(np.uint8)
        labels = [1, 2, 3, 4]
        ip = tmp_path / "images.gz"
        lp = tmp_path / "labels.gz"
        with gzip.open(ip, "wb") as f:
            f.write(struct.pack(">IIII", 0x803, *images.shape) + images.tobytes())
        with gzip.open(lp, "wb") as f:
            f.write(struct.pack(">II", 0x801, 4) + bytes(labels))
        ds = data.load_idx(ip, lp)
        assert np.array_equal(ds.labels, labels)

    def test_bundled_subsets_load(self):
        for name in ("mnist", "fashion"):
            ds = data.load_idx(
                data_path(f"{name}-train-images-idx3-ubyte.gz"),
                data_path(f"{name}-train-labels-idx1-ubyte.gz"),
            )
            assert len(ds) >= 5000
            assert ds.images.shape[1:] == (28, 28)
            te = data.load_idx(
                data_path(f"{name}-test-images-idx3-ubyte.gz"),
                data_path(f"{name}-test-labels-idx1-ubyte.gz"),
            )
            assert len(te) >= 1000


class TestResample:
    def test_identity_at_28(self, rng):
        img = rng.uniform(0, 1, (28, 28))
        assert np.array_equal(data.resample(img, 28), img)

    def test_constant_preserved(self):
        img = np.full((28, 28), 0.37)
        for n in (8, 14, 56, 64):
            out = data.resample(img, n)
            assert np.abs(out - 0.37).max() < 1e-12

    def test_exact_2x_round_trip(self, rng):
        img = rng.uniform(0, 1, (28, 28))
        up = data.resample(img, 56)
        back = data.resample(up, 28)
        assert np.abs(back - img).max() < 1e-9

    def test_mean_preserved_integer_ratios(self, rng):
        img = rng.uniform(0, 1, (28, 28))
        for n in (14, 56):
            assert abs(data.resample(img, n).mean() - img.mean()) < 1e-6

    def test_range_stays_in_unit_interval(self, rng):
        img = rng.uniform(0, 1, (28, 28))
        out = data.resample(img, 45)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestSplitAndBatch:
    def test_all_train(self, rng):
        ds = data.synthetic_two_blob(20, 8, seed=0)
        streams = data.split_and_batch(ds, (1.0, 0.0, 0.0), 4, seed=0)
        assert len(streams.train) == 20 and len(streams.test) == 0

    def test_same_seed_identical_batches(self):
        ds = data.synthetic_two_blob(30, 8, seed=0)
        a = data.split_and_batch(ds, (0.8, 0.0, 0.2), 4, seed=5)
        b = data.split_and_batch(ds, (0.8, 0.0, 0.2), 4, seed=5)
        for (xa, ya), (xb, yb) in zip(a.train_batches(1), b.train_batches(1)):
            assert np.array_equal(xa, xb) and np.array_equal(ya, yb)

    def test_batch_sizes(self):
        ds = data.synthetic_two_blob(100, 8, seed=0)
        streams = data.split_and_batch(ds, (1.0, 0.0, 0.0), 32, seed=0)
        sizes = [len(y) for _, y in streams.train_batches(0)]
        assert sizes == [32, 32, 32, 4]

    def test_batches_partition_split(self):
        ds = data.synthetic_two_blob(50, 8, seed=0)
        streams = data.split_and_batch(ds, (1.0, 0.0, 0.0), 7, seed=3)
        seen = np.concatenate([y for _, y in streams.train_batches(2)])
        assert len(seen) == 50
        assert np.array_equal(np.sort(seen), np.sort(ds.labels))

    def test_bad_fractions(self):
        ds = data.synthetic_two_blob(10, 8, seed=0)
        with pytest.raises(DataConsistencyError):
            data.split_and_batch(ds, (0.5, 0.0, 0.6), 4, seed=0)

    def test_empty_split_error(self):
        ds = data.synthetic_two_blob(10, 8, seed=0)
        streams = data.split_and_batch(ds, (1.0, 0.0, 0.0), 4, seed=0)
        with pytest.raises(EmptySplitError):
            next(streams.test_batches())


class TestSyntheticTwoBlob:
    def test_balanced(self):
        ds = data.synthetic_two_blob(10, 16, seed=1)
        assert int(np.sum(ds.labels == 0)) == 5

    def test_deterministic(self):
        a = data.synthetic_two_blob(10, 16, seed=2)
        b = data.synthetic_two_blob(10, 16, seed=2)
        assert np.array_equal(a.images, b.images)

    def test_class0_centroid_left_half(self):
        ds = data.synthetic_two_blob(40, 32, seed=3)
        cols = np.arange(32)
        for img, label in zip(ds.images, ds.labels):
            centroid = float((img.sum(axis=0) * cols).sum() / img.sum())
            if label == 0:
                assert centroid < 16
            else:
                assert centroid > 16


class TestCacheFormat:
    def test_round_trip(self, rng):
        ds = data.synthetic_two_blob(6, 12, seed=4)
        back = data.parse_dataset(data.serialize_dataset(ds))
        assert np.array_equal(back.images, ds.images)
        assert np.array_equal(back.labels, ds.labels)
        assert back.name == ds.name

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            data.parse_dataset(b"XXXX" + b"\x00" * 40)
