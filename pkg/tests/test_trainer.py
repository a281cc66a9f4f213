import numpy as np
import pytest

from curvprobe.data import Dataset, load_checkpoint
from curvprobe.errors import IncompleteLogError, TrainingDivergedError
from curvprobe.trainer import TrainConfig, TrainingDynamicsLog, dynamics_report, train
from conftest import synthetic_images, tiny


def small_ds(n=96, size=8, channels=3, seed=0):
    x, y = synthetic_images(n, seed, size=size, channels=channels)
    return Dataset(x, y)


def test_mnist_like_cnn_loss_decreases():
    ds = small_ds(200, size=28, channels=1)
    m = tiny("cnn", size=28, channels=1, widths=(16, 32, 64))
    res = train(m, ds, TrainConfig(epochs=5, ckpt_every=5, track_n=50, lr=2e-3), track_theta=False)
    assert res.history[-1] < res.history[0]
    assert res.log.loss[:, -1].mean() < res.log.loss[:, 0].mean()


def test_zero_lr_keeps_parameters():
    m = tiny("vit")
    before = [p.data.copy() for p in m.parameters()]
    res = train(m, small_ds(), TrainConfig(epochs=2, ckpt_every=1, lr=0.0, track_n=16))
    assert all(np.array_equal(a, p.data) for a, p in zip(before, m.parameters()))
    assert np.all(res.log.loss == res.log.loss[:, :1])


def test_zero_lr_cnn_parameters_unchanged():
    m = tiny("cnn")
    before = [p.data.copy() for p in m.parameters()]
    train(m, small_ds(), TrainConfig(epochs=1, lr=0.0, track_n=4), track_theta=False)
    assert all(np.array_equal(a, p.data) for a, p in zip(before, m.parameters()))


@pytest.mark.parametrize("opt", ["adamw", "sgd"])
def test_same_seed_same_parameters(opt):
    runs = []
    for _ in range(2):
        m = tiny("cnn", seed=4)
        train(m, small_ds(), TrainConfig(epochs=2, seed=9, optimizer=opt, schedule="cosine", track_n=8))
        runs.append([p.data.copy() for p in m.parameters()])
    assert all(np.array_equal(a, b) for a, b in zip(*runs))


def test_checkpoint_schedule(tmp_path):
    res = train(tiny("linear"), small_ds(), TrainConfig(epochs=20, ckpt_every=10, track_n=8), tmp_path)
    files = sorted(p.name for p in tmp_path.glob("*.cprb"))
    assert files == ["ckpt_epoch0000.cprb", "ckpt_epoch0010.cprb", "ckpt_epoch0020.cprb", "final.cprb"]
    assert [e for e, _ in res.checkpoints] == [0, 10, 20]
    assert load_checkpoint(tmp_path / "ckpt_epoch0010.cprb").epoch == 10


def test_zero_epochs(tmp_path):
    res = train(tiny("linear"), small_ds(), TrainConfig(epochs=0, track_n=8), tmp_path)
    assert [p.name for p in tmp_path.glob("*.cprb")] == ["ckpt_epoch0000.cprb"]
    rep = dynamics_report(res.log)
    assert set(rep["loss_change"][0]) == {"sample_id", "final_theta1"}


def test_divergence_reports_last_checkpoint(tmp_path):
    ds = small_ds()
    ds.images[5] = np.nan
    with pytest.raises(TrainingDivergedError) as info:
        train(tiny("linear"), ds, TrainConfig(epochs=1, track_n=0), tmp_path, track_theta=False)
    assert info.value.last_checkpoint == tmp_path / "ckpt_epoch0000.cprb"


def test_theta_tracked():
    res = train(tiny("vit"), small_ds(), TrainConfig(epochs=1, track_n=10))
    assert np.isfinite(res.log.theta1).all()
    assert res.log.theta1.shape == (10, 2)


def log(loss, theta):
    loss, theta = np.asarray(loss, float), np.asarray(theta, float)
    return TrainingDynamicsLog(np.arange(len(loss)), list(range(loss.shape[1])), loss, theta)


def test_constant_loss_zero_changes():
    rep = dynamics_report(log(np.ones((3, 4)), np.zeros((3, 4))))
    assert all(v == 0 for row in rep["loss_change"] for k, v in row.items() if k.startswith("d"))


def test_rows_sorted_by_final_theta():
    rep = dynamics_report(log(np.ones((2, 2)), [[0.0, 0.9], [0.0, 0.1]]))
    assert [r["sample_id"] for r in rep["loss_change"]] == [1, 0]


def test_clipping_only_in_heatmap():
    rep = dynamics_report(log([[6.0, 1.0]], [[0.0, 0.5]]))
    assert rep["loss_change"][0]["d0_1"] == -2.0
    assert rep["loss_scatter"][0]["loss_change_to_end"] == -5.0


def test_incomplete_log():
    with pytest.raises(IncompleteLogError):
        dynamics_report(log([[1.0, np.nan]], [[0.0, 0.0]]))
    bad = TrainingDynamicsLog(np.arange(2), [0, 1], np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(IncompleteLogError):
        dynamics_report(bad)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=-1)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    assert TrainConfig(epochs=60).checkpoint_epochs() == [0, 10, 20, 30, 40, 50, 60]
    assert TrainConfig(epochs=25, ckpt_every=10).checkpoint_epochs() == [0, 10, 20, 25]
