import gzip
import os
import struct

import numpy as np
import pytest

from conftest import FIXTURES, MNIST_DIR
from digitnet.errors import ConfigError, DomainError, FormatError, UserError
from digitnet.mnist import (
    IMAGES_MAGIC,
    LABELS_MAGIC,
    BatchPlan,
    RawIdx,
    batches,
    load_split,
    normalize,
    one_hot,
    parse_idx,
    read_idx,
    serialize_idx,
)
from digitnet.tensor import argmax


def header(magic, *dims):
    return struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)


class TestParseIdx:
    def test_images_header(self):
        raw = parse_idx(header(IMAGES_MAGIC, 2, 28, 28) + bytes(2 * 784))
        assert raw.dims == (2, 28, 28) and raw.payload.size == 1568

    def test_mnist_sized_headers(self):
        # 60,000 training images / 10,000 test labels
        big = parse_idx(header(IMAGES_MAGIC, 60000, 28, 28) + bytes(60000 * 784))
        assert big.dims == (60000, 28, 28)
        lab = parse_idx(header(LABELS_MAGIC, 10000) + bytes(10000))
        assert lab.dims == (10000,)

    def test_big_endian(self):
        raw = parse_idx(bytes([0, 0, 8, 1, 0, 0, 1, 0]) + bytes(256))
        assert raw.dims == (256,)

    def test_bad_magic(self):
        with pytest.raises(FormatError, match="0xDEADBEEF"):
            parse_idx(struct.pack(">I", 0xDEADBEEF) + bytes(8))

    def test_truncated_payload(self):
        with pytest.raises(FormatError, match="expected 10 bytes, got 9"):
            parse_idx(header(LABELS_MAGIC, 10) + bytes(9))

    def test_too_short(self):
        with pytest.raises(FormatError):
            parse_idx(b"\x00\x00\x08")

    def test_roundtrip(self):
        data = header(IMAGES_MAGIC, 3, 2, 2) + bytes(range(12))
        assert serialize_idx(parse_idx(data)) == data

    def test_fixture_roundtrip(self):
        path = os.path.join(FIXTURES, "train-images-idx3-ubyte")
        data = open(path, "rb").read()
        assert serialize_idx(parse_idx(data)) == data

    def test_gzip_autodetect(self, tmp_path):
        data = header(LABELS_MAGIC, 4) + bytes([1, 2, 3, 4])
        p = tmp_path / "labels.gz"
        p.write_bytes(gzip.compress(data))
        np.testing.assert_array_equal(read_idx(p).payload, [1, 2, 3, 4])

    def test_missing_file(self, tmp_path):
        with pytest.raises(UserError):
            read_idx(tmp_path / "nope")


class TestNormalizeOneHot:
    def test_normalize(self):
        np.testing.assert_allclose(normalize(np.array([0, 255, 51], dtype=np.uint8)), [0.0, 1.0, 0.2])

    def test_one_hot(self):
        np.testing.assert_array_equal(one_hot(3), [0, 0, 0, 1, 0, 0, 0, 0, 0, 0])
        np.testing.assert_array_equal(one_hot(0), [1] + [0] * 9)
        with pytest.raises(DomainError):
            one_hot(10)
        with pytest.raises(DomainError):
            one_hot(-1)

    def test_one_hot_argmax_inverse(self):
        assert [argmax(one_hot(k)) for k in range(10)] == list(range(10))


class TestDataset:
    def test_fixture(self, mini_train):
        assert len(mini_train) == 64
        assert mini_train.images.shape == (64, 28, 28, 1)
        assert mini_train.images.min() >= 0.0 and mini_train.images.max() <= 1.0
        assert mini_train.labels.min() >= 0 and mini_train.labels.max() <= 9
        np.testing.assert_array_equal(mini_train.onehot.sum(axis=1), 1.0)
        np.testing.assert_array_equal(np.argmax(mini_train.onehot, axis=1), mini_train.labels)

    def test_bundled_subset(self, real5k):
        train, test = real5k
        assert (len(train), len(test)) == (4000, 1000)
        assert np.all(np.bincount(train.labels, minlength=10) > 0)

    @pytest.mark.skipif(not MNIST_DIR, reason="set MNIST_DIR to the full MNIST IDX files")
    def test_full_mnist(self):
        train, test = load_split(MNIST_DIR, "train"), load_split(MNIST_DIR, "test")
        assert (len(train), len(test)) == (60000, 10000)
        assert np.all(np.bincount(train.labels, minlength=10) > 0)


class TestBatches:
    def _data(self, n):
        from digitnet.mnist import Dataset

        return Dataset(np.zeros((n, 28, 28, 1)), np.arange(n) % 10)

    def test_sizes(self):
        sizes = [len(b[0]) for b in batches(self._data(10), BatchPlan(4, seed=1))]
        assert sizes == [4, 4, 2]

    def test_drop_last(self):
        sizes = [len(b[0]) for b in batches(self._data(10), BatchPlan(4, seed=1, drop_last=True))]
        assert sizes == [4, 4]

    def test_permutation_and_determinism(self):
        data = self._data(37)
        data.labels = np.arange(37)  # label doubles as sample id
        a = np.concatenate([b[2] for b in batches(data, BatchPlan(8, seed=3))])
        b = np.concatenate([b[2] for b in batches(data, BatchPlan(8, seed=3))])
        np.testing.assert_array_equal(np.sort(a), np.arange(37))
        np.testing.assert_array_equal(a, b)
        c = np.concatenate([b[2] for b in batches(data, BatchPlan(8, seed=4))])
        assert not np.array_equal(a, c)

    def test_zero_batch(self):
        with pytest.raises(ConfigError):
            BatchPlan(0)
