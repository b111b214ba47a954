import gzip
import math
import os
import struct

import numpy as np
import pytest

from scornn import tasks


def test_copying_layout(rng):
    T = 30
    b = tasks.gen_copying(T, 64, rng)
    assert b.inputs.shape == (64, T + 20, 10) and b.T == T + 20
    seq = b.inputs.argmax(axis=-1)
    np.testing.assert_array_equal(b.inputs.sum(axis=-1), 1.0)
    assert np.all(seq[:, T + 9] == 9)
    assert np.all((seq == 9).sum(axis=1) == 1)
    assert np.all((seq[:, :10] >= 1) & (seq[:, :10] <= 8))
    assert np.all(seq[:, 10:T + 9] == 0) and np.all(seq[:, T + 10:] == 0)
    np.testing.assert_array_equal(b.targets[:, -10:], seq[:, :10])
    assert np.all(b.targets[:, :-10] == 0)
    assert not np.any(b.targets == 9)
    assert b.loss_kind == tasks.XENT_PER_STEP and b.output_mode == "per-step"


def test_copying_symbols_cover_1_to_8(rng):
    b = tasks.gen_copying(5, 500, rng)
    assert set(np.unique(b.targets[:, -10:])) == set(range(1, 9))


def test_copying_baseline_values():
    assert tasks.copying_baseline(1000) == pytest.approx(0.020388, abs=1e-5)
    assert tasks.copying_baseline(2000) == pytest.approx(0.010297, abs=1e-5)
    assert tasks.copying_baseline(200) == 10 * math.log(8) / 220


def test_generators_are_pure():
    for gen, T in ((tasks.gen_copying, 20), (tasks.gen_adding, 20)):
        a = gen(T, 16, np.random.default_rng(7))
        b = gen(T, 16, np.random.default_rng(7))
        assert a.inputs.tobytes() == b.inputs.tobytes()
        assert a.targets.tobytes() == b.targets.tobytes()


def test_adding_layout(rng):
    T = 50
    b = tasks.gen_adding(T, 200, rng)
    assert b.inputs.shape == (200, T, 2) and b.targets.shape == (200, 1)
    markers = b.inputs[:, :, 1]
    assert np.all(markers.sum(axis=1) == 2)
    vals = b.inputs[:, :, 0]
    assert np.all((vals >= 0) & (vals < 1))
    np.testing.assert_allclose(b.targets[:, 0], (vals * markers).sum(axis=1), atol=1e-15)
    assert b.loss_kind == tasks.MSE_LAST and b.output_mode == "last-step"


def test_adding_half_and_half_target():
    b = tasks.gen_adding(10, 1, np.random.default_rng(0))
    pos = np.flatnonzero(b.inputs[0, :, 1])
    b.inputs[0, pos, 0] = 0.5
    assert (b.inputs[0, :, 0] * b.inputs[0, :, 1]).sum() == 1.0


@pytest.mark.parametrize("T", [4, 7, 200])
def test_adding_marker_positions(T):
    b = tasks.gen_adding(T, 100_000, np.random.default_rng(T))
    first = b.inputs[:, :, 1].argmax(axis=1)
    second = T - 1 - b.inputs[:, ::-1, 1].argmax(axis=1)
    assert first.min() >= 1 and first.max() < T / 2
    assert second.min() >= T / 2 and second.max() < T
    # both ends of each interval are hit
    assert first.min() == 1 and first.max() == math.ceil(T / 2) - 1
    assert second.min() == math.ceil(T / 2) and second.max() == T - 1


def test_adding_statistics():
    b = tasks.gen_adding(20, 100_000, np.random.default_rng(1))
    assert abs(b.targets.mean() - 1.0) <= 0.01
    const = np.mean((1.0 - b.targets) ** 2)
    assert abs(const - 0.167) <= 0.01


def test_adding_rejects_short():
    with pytest.raises(ValueError):
        tasks.gen_adding(3, 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        tasks.gen_copying(0, 1, np.random.default_rng(0))


def test_task_metric():
    b = tasks.TaskBatch(np.zeros((2, 1, 1)), np.array([1, 0]), tasks.XENT_LAST, 1)
    assert tasks.task_metric(np.array([[0.0, 1.0], [0.0, 1.0]]), b) == 0.5


# -- IDX / MNIST ------------------------------------------------------------

def write_idx(path, magic, array, compress=False, dims=None):
    dims = dims if dims is not None else array.shape
    data = struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + array.astype(np.uint8).tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as fh:
        fh.write(data)


@pytest.fixture
def mnist_dir(tmp_path):
    rng = np.random.default_rng(0)
    for prefix, count in (("train", 60), ("t10k", 20)):
        write_idx(tmp_path / f"{prefix}-images-idx3-ubyte", tasks.IDX_IMAGES_MAGIC,
                  rng.integers(0, 256, size=(count, 28, 28)))
        write_idx(tmp_path / f"{prefix}-labels-idx1-ubyte", tasks.IDX_LABELS_MAGIC, rng.integers(0, 10, size=count))
    return tmp_path


def test_load_mnist(mnist_dir):
    ds = tasks.load_mnist(mnist_dir / "train-images-idx3-ubyte", mnist_dir / "train-labels-idx1-ubyte")
    assert len(ds) == 60 and ds.pixels.shape == (60, 784)
    raw = tasks.read_idx(mnist_dir / "train-images-idx3-ubyte", tasks.IDX_IMAGES_MAGIC)
    b = ds.batch(np.array([3, 5]))
    assert b.inputs.shape == (2, 784, 1) and b.T == 784
    np.testing.assert_allclose(b.inputs[0, :, 0], raw[3].reshape(-1) / 255.0)
    assert b.inputs.min() >= 0 and b.inputs.max() <= 1


def test_full_size_header(tmp_path):
    path = tmp_path / "imgs.gz"
    write_idx(path, tasks.IDX_IMAGES_MAGIC, np.zeros((60000, 28, 28), dtype=np.uint8), compress=True)
    assert tasks.read_idx(path, tasks.IDX_IMAGES_MAGIC).shape == (60000, 28, 28)


def test_idx_errors(tmp_path):
    p = tmp_path / "bad"
    write_idx(p, tasks.IDX_LABELS_MAGIC, np.zeros(5))
    with pytest.raises(tasks.IdxFormatError, match="magic"):
        tasks.read_idx(p, tasks.IDX_IMAGES_MAGIC)
    write_idx(p, tasks.IDX_LABELS_MAGIC, np.zeros(5), dims=(6,))
    with pytest.raises(tasks.IdxFormatError, match="truncated"):
        tasks.read_idx(p, tasks.IDX_LABELS_MAGIC)
    p.write_bytes(b"\x00\x00")
    with pytest.raises(tasks.IdxFormatError, match="truncated"):
        tasks.read_idx(p, tasks.IDX_LABELS_MAGIC)
    imgs, labels = tmp_path / "i", tmp_path / "l"
    write_idx(imgs, tasks.IDX_IMAGES_MAGIC, np.zeros((3, 28, 28)))
    write_idx(labels, tasks.IDX_LABELS_MAGIC, np.zeros(4))
    with pytest.raises(tasks.IdxFormatError, match="labels"):
        tasks.load_mnist(imgs, labels)


def test_permutation(mnist_dir):
    ds = tasks.load_mnist(mnist_dir / "train-images-idx3-ubyte", mnist_dir / "train-labels-idx1-ubyte")
    a, b = tasks.apply_permutation(ds, 5), tasks.apply_permutation(ds, 5)
    np.testing.assert_array_equal(a.permutation, b.permutation)
    np.testing.assert_array_equal(np.sort(a.permutation), np.arange(784))
    assert not np.array_equal(a.permutation, np.arange(784))
    assert not np.array_equal(tasks.apply_permutation(ds, 6).permutation, a.permutation)
    idx = np.array([0, 1])
    np.testing.assert_array_equal(a.batch(idx).inputs[:, :, 0], ds.batch(idx).inputs[:, a.permutation, 0])


def test_splits(mnist_dir, monkeypatch):
    monkeypatch.setattr(tasks, "MNIST_TRAIN_SIZE", 50)
    monkeypatch.setenv("SCORNN_DATA", str(mnist_dir))
    splits = tasks.load_mnist_splits(permute_seed=3)
    assert [len(splits[k]) for k in ("train", "valid", "test")] == [50, 10, 20]
    perms = [splits[k].permutation for k in splits]
    assert all(np.array_equal(perms[0], p) for p in perms)


@pytest.mark.skipif(not os.environ.get("SCORNN_DATA"), reason="SCORNN_DATA not set")
def test_real_mnist_header():
    root = tasks.mnist_root()
    ds = tasks.load_mnist(tasks._find(root, "train-images-idx3-ubyte"), tasks._find(root, "train-labels-idx1-ubyte"))
    assert len(ds) == 60000 and ds.pixels.shape[1] == 784
