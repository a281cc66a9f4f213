import gzip
import struct

import numpy as np
import pytest

from curvprobe.data import load_checkpoint, load_cifar, load_dataset, load_idx, save_checkpoint, subset, subset_indices
from curvprobe.errors import BadMagicError, CheckpointError, CheckpointVersionError, LabelRangeError, TruncatedFileError
from curvprobe.zoo import outputs
from conftest import tiny, write_cifar


def write_idx(directory, n=5, size=28, prefix="train", gz=False, label_max=9):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (n, size, size), dtype=np.uint8)
    lab = rng.integers(0, label_max + 1, n, dtype=np.uint8)
    img_raw = struct.pack(">IIII", 0x803, n, size, size) + img.tobytes()
    lab_raw = struct.pack(">II", 0x801, n) + lab.tobytes()
    opener, suffix = (gzip.open, ".gz") if gz else (open, "")
    with opener(directory / f"{prefix}-images-idx3-ubyte{suffix}", "wb") as f:
        f.write(img_raw)
    with opener(directory / f"{prefix}-labels-idx1-ubyte{suffix}", "wb") as f:
        f.write(lab_raw)
    return img, lab


@pytest.mark.parametrize("gz", [False, True])
def test_idx_roundtrip(tmp_path, gz):
    img, lab = write_idx(tmp_path, gz=gz)
    ds = load_idx(tmp_path)
    assert ds.images.shape == (5, 1, 28, 28)
    np.testing.assert_array_equal(ds.labels, lab)
    np.testing.assert_allclose(ds.images[:, 0], img / 255.0, rtol=1e-6)


def test_idx_test_split_and_file_path(tmp_path):
    write_idx(tmp_path, prefix="t10k")
    assert len(load_dataset(tmp_path, "idx", "test")) == 5
    assert len(load_idx(tmp_path / "t10k-images-idx3-ubyte")) == 5


def test_idx_bad_magic(tmp_path):
    write_idx(tmp_path)
    p = tmp_path / "train-images-idx3-ubyte"
    raw = bytearray(p.read_bytes())
    raw[3] = 0x99
    p.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        load_idx(tmp_path)


def test_idx_truncated(tmp_path):
    write_idx(tmp_path)
    p = tmp_path / "train-images-idx3-ubyte"
    p.write_bytes(p.read_bytes()[:-10])
    with pytest.raises(TruncatedFileError):
        load_idx(tmp_path)


def test_idx_label_range(tmp_path):
    write_idx(tmp_path, label_max=12)
    with pytest.raises(LabelRangeError):
        load_idx(tmp_path, num_classes=10)


def test_cifar_records(tmp_path):
    write_cifar(tmp_path, 30, 20)
    train = load_cifar(tmp_path, "train")
    test = load_cifar(tmp_path / "test_batch.bin")
    assert train.images.shape == (30, 3, 32, 32) and len(test) == 20
    raw = np.frombuffer((tmp_path / "data_batch_1.bin").read_bytes(), np.uint8).reshape(30, 3073)
    np.testing.assert_array_equal(train.labels, raw[:, 0])
    np.testing.assert_allclose(train.images[3].ravel(), raw[3, 1:] / 255.0, rtol=1e-6)


def test_cifar_truncated(tmp_path):
    write_cifar(tmp_path, 3, 2)
    p = tmp_path / "data_batch_1.bin"
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(TruncatedFileError):
        load_cifar(tmp_path)


def test_subset_full_size_is_permutation(cifar_dir):
    ds = load_cifar(cifar_dir)
    full = subset(ds, len(ds), 7)
    assert sorted(full.indices.tolist()) == list(range(len(ds)))


def test_subset_determinism():
    assert np.array_equal(subset_indices(1000, 50, 3), subset_indices(1000, 50, 3))
    assert not np.array_equal(subset_indices(1000, 50, 3), subset_indices(1000, 50, 4))


def test_subset_too_large():
    with pytest.raises(ValueError):
        subset_indices(5, 6, 0)


@pytest.mark.parametrize("arch", ["cnn", "vit", "linear"])
def test_checkpoint_roundtrip(tmp_path, arch):
    m = tiny(arch, seed=3)
    p = save_checkpoint(m, tmp_path / "m.cprb", epoch=17)
    ck = load_checkpoint(p)
    assert ck.epoch == 17
    for (na, a), (nb, b) in zip(m.state_dict().items(), ck.model.state_dict().items()):
        assert na == nb and np.array_equal(a, b)
    x = np.random.default_rng(0).uniform(0, 1, (2, 3, 8, 8)).astype(np.float32)
    assert np.array_equal(outputs(m, x)[0], outputs(ck.model, x)[0])


def test_checkpoint_errors(tmp_path):
    p = save_checkpoint(tiny("linear"), tmp_path / "m.cprb")
    raw = p.read_bytes()
    (tmp_path / "magic.cprb").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "magic.cprb")
    (tmp_path / "ver.cprb").write_bytes(raw[:4] + struct.pack("<I", 99) + raw[8:])
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(tmp_path / "ver.cprb")
    (tmp_path / "trunc.cprb").write_bytes(raw[:-4])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "trunc.cprb")
    (tmp_path / "extra.cprb").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "extra.cprb")
