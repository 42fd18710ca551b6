import os
import struct

import numpy as np
import pytest

from corel import cluster, data
from corel.errors import ContractViolation
from corel.linalg import make_rng

MNIST_DIR = os.environ.get("COREL_MNIST_DIR", "/root/data/mnist")
have_mnist = pytest.mark.skipif(
    not os.path.exists(os.path.join(MNIST_DIR, data.MNIST_FILES["train_images"])),
    reason="MNIST IDX files not available")


def write_idx(tmp_path, images, labels, img_magic=2051, lab_magic=2049, img_count=None):
    images = np.asarray(images, dtype=np.uint8)
    n, r, c = images.shape
    ip = tmp_path / "img.idx"
    lp = tmp_path / "lab.idx"
    ip.write_bytes(struct.pack(">IIII", img_magic, n if img_count is None else img_count, r, c)
                   + images.tobytes())
    lp.write_bytes(struct.pack(">II", lab_magic, len(labels)) + bytes(labels))
    return str(ip), str(lp)


def test_load_idx_handbuilt(tmp_path):
    ip, lp = write_idx(tmp_path, np.zeros((2, 28, 28)), [3, 7])
    ds = data.load_idx(ip, lp)
    assert ds.x.shape == (2, 784)
    assert np.all(ds.x == 0.0)
    assert ds.y.tolist() == [3, 7]


def test_load_idx_scaling(tmp_path):
    img = np.arange(2 * 2 * 2).reshape(2, 2, 2) * 30
    ip, lp = write_idx(tmp_path, img, [0, 1])
    ds = data.load_idx(ip, lp)
    np.testing.assert_array_equal(ds.x, img.reshape(2, 4) / 255.0)


def test_load_idx_bad_magic(tmp_path):
    ip, lp = write_idx(tmp_path, np.zeros((1, 2, 2)), [0], img_magic=2049)
    with pytest.raises(data.FormatError) as err:
        data.load_idx(ip, lp)
    assert err.value.offset == 0


def test_load_idx_truncated(tmp_path):
    ip, lp = write_idx(tmp_path, np.zeros((2, 2, 2)), [0, 1], img_count=3)
    with pytest.raises(data.FormatError, match="truncated") as err:
        data.load_idx(ip, lp)
    assert err.value.offset == 16 + 8


def test_load_idx_count_mismatch(tmp_path):
    ip, lp = write_idx(tmp_path, np.zeros((2, 2, 2)), [0, 1, 2])
    with pytest.raises(data.FormatError, match="labels"):
        data.load_idx(ip, lp)


def test_csv_roundtrip_and_errors(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,label\n0.5,1.5,1\n-1,2,0\n")
    ds = data.load_csv(str(p), header=True)
    np.testing.assert_array_equal(ds.x, [[0.5, 1.5], [-1, 2]])
    assert ds.y.tolist() == [1, 0] and ds.k == 2

    p.write_text("0.5,1.5,1\n-1,oops,0\n")
    with pytest.raises(data.FormatError, match="line 2") as err:
        data.load_csv(str(p))
    assert err.value.offset == 2

    p.write_text("0.5,1.5,1\n-1,0\n")
    with pytest.raises(data.FormatError, match="line 2"):
        data.load_csv(str(p))


def test_blobs_deterministic():
    a = data.make_blobs(3, 20, 4, 5.0, 0.3, make_rng(1))
    b = data.make_blobs(3, 20, 4, 5.0, 0.3, make_rng(1))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_blobs_zero_noise_limit_nearest_centroid():
    ds = data.make_blobs(2, 50, 3, 4.0, 1e-9, make_rng(4))
    centers = np.array(ds.meta["centers"])
    d = ((ds.x[:, None, :] - centers[None]) ** 2).sum(-1)
    assert np.array_equal(d.argmin(1), ds.y)


def test_blobs_kmeans_recovers_classes():
    ds = data.make_blobs(4, 100, 2, 10.0, 0.5, make_rng(8))
    km = cluster.kmeans_best(ds.x, 4, make_rng(0))
    _, acc = cluster.hungarian_align(km.assignments, ds.y)
    assert acc > 0.95


def test_blobs_preconditions():
    with pytest.raises(ContractViolation):
        data.make_blobs(1, 5, 2, 1.0, 0.1, make_rng(0))
    with pytest.raises(ContractViolation):
        data.make_blobs(2, 5, 2, 1.0, 0.0, make_rng(0))


def test_split_sizes_and_partition():
    ds = data.make_blobs(4, 25, 2, 3.0, 0.2, make_rng(0))
    s = data.split(ds, 0.15, 0.15, make_rng(1))
    assert (s.train.size, s.val.size, s.test.size) == (70, 15, 15)
    joined = np.sort(np.concatenate([s.train, s.val, s.test]))
    np.testing.assert_array_equal(joined, np.arange(100))

    s0 = data.split(ds, 0.0, 0.0, make_rng(1))
    assert s0.train.size == 100 and s0.val.size == 0 and s0.test.size == 0


def test_split_errors():
    ds = data.make_blobs(2, 2, 2, 3.0, 0.2, make_rng(0))
    with pytest.raises(ContractViolation):
        data.split(ds, 0.1, 0.1, make_rng(0))  # 4 rows: 0.1 rounds to an empty split
    with pytest.raises(ContractViolation):
        data.split(ds, 0.6, 0.5, make_rng(0))


def test_dataset_invariants_enforced():
    with pytest.raises(ContractViolation):
        data.Dataset(x=np.zeros((3, 2)), y=np.array([0, 1, 5]), k=2)
    with pytest.raises(ContractViolation):
        data.Dataset(x=np.zeros((3, 2)), y=np.zeros(3, int), k=2,
                     train=np.array([0, 1]), val=np.array([1]), test=np.array([2]))


@have_mnist
def test_mnist_canonical_files():
    tr = data.load_idx(os.path.join(MNIST_DIR, data.MNIST_FILES["train_images"]),
                       os.path.join(MNIST_DIR, data.MNIST_FILES["train_labels"]))
    assert tr.x.shape == (60000, 784) and tr.k == 10
    assert set(np.unique(tr.y)) == set(range(10))
    assert 0.0 <= tr.x.min() and tr.x.max() <= 1.0
    te = data.load_idx(os.path.join(MNIST_DIR, data.MNIST_FILES["test_images"]),
                       os.path.join(MNIST_DIR, data.MNIST_FILES["test_labels"]))
    assert te.x.shape == (10000, 784)


@have_mnist
def test_mnist_split_sizes_and_reload_identical():
    a = data.load_mnist(MNIST_DIR, make_rng(0))
    assert (a.train.size, a.val.size, a.test.size) == (55000, 5000, 10000)
    del a
    b = data.load_mnist(MNIST_DIR, make_rng(0), train_subset=1000)
    c = data.load_mnist(MNIST_DIR, make_rng(0), train_subset=1000)
    assert np.array_equal(b.x, c.x) and np.array_equal(b.y, c.y)
    assert (b.train.size, b.val.size, b.test.size) == (1000, 5000, 10000)
