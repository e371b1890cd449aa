"""IDX files, CSV loading, synthetic data, and split bookkeeping."""
import gzip

import numpy as np
import pytest

from evotir.datasets import (DatasetConfig, DatasetError, gaussian_blobs,
                             load_dataset, read_idx_images, read_idx_labels,
                             synthetic_digits, write_idx_dataset,
                             write_idx_images, write_idx_labels)


def test_idx_round_trip(tmp_path):
    images = np.arange(2 * 4 * 3, dtype=np.uint8).reshape(2, 4, 3)
    labels = np.array([7, 1], dtype=np.uint8)
    ip = str(tmp_path / "imgs")
    lp = str(tmp_path / "labels")
    write_idx_images(ip, images)
    write_idx_labels(lp, labels)
    x = read_idx_images(ip)
    y = read_idx_labels(lp)
    assert x.shape == (2, 12)
    assert np.allclose(x * 255.0, images.reshape(2, 12))
    assert y.tolist() == [7, 1]


def test_idx_gzip_supported(tmp_path):
    images = np.zeros((3, 2, 2), dtype=np.uint8)
    plain = tmp_path / "plain"
    write_idx_images(str(plain), images)
    gz = tmp_path / "imgs.gz"
    gz.write_bytes(gzip.compress(plain.read_bytes()))
    assert read_idx_images(str(gz)).shape == (3, 4)


def test_idx_magic_validation(tmp_path):
    bad = tmp_path / "bad"
    bad.write_bytes(b"\x00\x00\x08\x99" + b"\x00" * 16)
    with pytest.raises(DatasetError):
        read_idx_images(str(bad))
    with pytest.raises(DatasetError):
        read_idx_labels(str(bad))


def test_synthetic_digits_deterministic_and_balanced():
    x1, y1 = synthetic_digits(200, seed=5)
    x2, y2 = synthetic_digits(200, seed=5)
    x3, _ = synthetic_digits(200, seed=6)
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    assert not np.array_equal(x1, x3)
    assert x1.dtype == np.uint8 and x1.shape == (200, 28, 28)
    counts = np.bincount(y1, minlength=10)
    assert counts.min() == 20 and counts.max() == 20


def test_gaussian_blobs_two_classes():
    x, y = gaussian_blobs(100, seed=1, features=16)
    assert x.shape == (100, 16)
    assert set(y.tolist()) == {0, 1}
    assert x.min() >= 0.0 and x.max() <= 1.0


def test_load_synthetic_splits_and_counters():
    cfg = DatasetConfig(search_n=96, holdout_n=64)
    ds = load_dataset(cfg)
    assert ds.search.x.shape == (96, 784)
    assert ds.holdout.x.shape == (64, 784)
    assert ds.search.reads == 0 and ds.holdout.reads == 0
    batches = ds.search.whole_batches(32, 10)
    assert ds.search.reads == 1 and ds.holdout.reads == 0
    assert len(batches) == 3
    xb, yb, lb = batches[0]
    assert xb.shape == (32, 784) and yb.shape == (32, 10) and lb.shape == (32,)
    assert np.all(yb.sum(axis=1) == 1.0)
    assert np.all(yb[np.arange(32), lb] == 1.0)


def test_partial_batches_are_dropped():
    ds = load_dataset(DatasetConfig(search_n=100, holdout_n=64))
    batches = ds.search.whole_batches(32, 10)
    assert len(batches) == 3  # 100 -> 96 used


def test_idx_source_round_trip(tmp_path):
    images, labels = synthetic_digits(160, seed=3)
    write_idx_dataset(str(tmp_path), images, labels)
    ds = load_dataset(DatasetConfig(source="idx", directory=str(tmp_path),
                                    search_n=96, holdout_n=64))
    assert ds.search.x.shape == (96, 784)
    assert np.array_equal(ds.search.labels, labels[:96])


def test_dataset_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(DatasetConfig(source="idx", directory="/no/such/dir"))
    with pytest.raises(DatasetError):
        load_dataset(DatasetConfig(source="nope"))
    with pytest.raises(DatasetError):
        load_dataset(DatasetConfig(features=30))  # not square
    images, labels = synthetic_digits(50, seed=3)
    write_idx_dataset(str(tmp_path), images, labels)
    with pytest.raises(DatasetError):  # 50 examples cannot cover 96 + 64
        load_dataset(DatasetConfig(source="idx", directory=str(tmp_path),
                                   search_n=96, holdout_n=64))


def test_blobs_source():
    ds = load_dataset(DatasetConfig(source="blobs", classes=2, features=64,
                                    search_n=64, holdout_n=32))
    assert ds.search.x.shape == (64, 64)
    assert ds.classes == 2
