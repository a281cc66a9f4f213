import numpy as np
import pytest

from curvprobe.zoo import ArchConfig, build_model


def synthetic_images(n, seed=0, size=32, channels=3, classes=10):
    """Images whose mean color depends on the label, so small models can learn them."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, n)
    palette = np.random.default_rng(1234).uniform(0.2, 0.8, (classes, channels))
    base = palette[labels][:, :, None, None]
    images = np.clip(base + rng.normal(0, 0.12, (n, channels, size, size)), 0, 1)
    return images.astype(np.float32), labels.astype(np.int64)


def write_cifar(directory, n_train=200, n_test=100, seed=0):
    """data_batch_1.bin and test_batch.bin in the CIFAR-10 binary layout."""
    directory.mkdir(parents=True, exist_ok=True)
    for name, n, s in (("data_batch_1.bin", n_train, seed), ("test_batch.bin", n_test, seed + 1)):
        x, y = synthetic_images(n, s)
        pix = np.round(x * 255).astype(np.uint8).reshape(n, -1)
        rec = np.concatenate([y.astype(np.uint8)[:, None], pix], axis=1)
        (directory / name).write_bytes(rec.tobytes())
    return directory


@pytest.fixture(scope="session")
def cifar_dir(tmp_path_factory):
    return write_cifar(tmp_path_factory.mktemp("cifar"))


def tiny(arch, seed=0, size=8, channels=3, classes=10, **kw):
    if arch == "cnn":
        kw.setdefault("widths", (4, 8, 8))
    if arch == "vit":
        kw.setdefault("embed_dim", 16)
        kw.setdefault("depth", 1)
        kw.setdefault("heads", 2)
    cfg = ArchConfig.for_dataset(arch, channels, size, classes, **kw)
    return build_model(cfg, seed)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
