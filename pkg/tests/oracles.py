"""Independent reference implementations and hand-built models for oracle tests."""

import numpy as np

from curvprobe.zoo import AffineClassifier, ArchConfig


def brute_calibration(conf, correct, k=10):
    """Per-sample loops with explicit (lo, hi] comparisons; returns (ece, sece, counts)."""
    n = len(conf)
    ece = sece = 0.0
    counts = []
    for b in range(k):
        lo, hi = b / k, (b + 1) / k
        members = [i for i in range(n) if (lo < conf[i] <= hi) or (b == 0 and conf[i] <= lo)]
        counts.append(len(members))
        if not members:
            continue
        acc = sum(float(correct[i]) for i in members) / len(members)
        avg = sum(float(conf[i]) for i in members) / len(members)
        ece += len(members) / n * abs(acc - avg)
        sece += len(members) / n * (acc - avg)
    return ece, sece, counts


def identity_linear(shape, head_w, head_b):
    """Classifier whose features are the raw flattened input and whose head is given."""
    cfg = ArchConfig("linear", shape[0], shape[1], head_w.shape[0], mean=(0.0,) * shape[0],
                     std=(1.0,) * shape[0], extra={"identity": True})
    m = AffineClassifier(cfg, identity=True)
    m.head.weight.data = np.asarray(head_w, np.float32)
    m.head.bias.data = np.asarray(head_b, np.float32)
    m.eval()
    return m


def linear_boundary_case(rng, shape=(1, 4, 4), t_range=(0.005, 0.25)):
    """Two-class linear model, start x (class 0) and sign direction d with boundary at x + t d."""
    D = int(np.prod(shape))
    x = rng.uniform(0.3, 0.7, D)
    d = np.where(rng.random(D) < 0.5, -1.0, 1.0)
    dw = rng.normal(size=D)
    if dw @ d < 0:
        dw = -dw
    t = float(rng.uniform(*t_range))
    # logit_1 - logit_0 = dw . z + db, zero at z = x + t d
    db = -(dw @ (x + t * d))
    w = np.stack([np.zeros(D), dw])
    b = np.array([0.0, db])
    m = identity_linear(shape, w, b)
    x32 = x.reshape(shape).astype(np.float32)
    # exact boundary for the float32 start point the model actually sees
    t = float(-(dw @ x32.ravel().astype(np.float64) + db) / (dw @ d))
    return m, x32, d.reshape(shape).astype(np.float32), t


def random_affine(rng, shape=(1, 4, 4), feat=6, classes=3):
    cfg = ArchConfig("linear", shape[0], shape[1], classes, mean=(0.5,) * shape[0], std=(0.25,) * shape[0],
                     feature_dim=feat)
    m = AffineClassifier(cfg, seed=int(rng.integers(1 << 31)))
    m.shift.data = rng.normal(size=feat).astype(np.float32)
    m.eval()
    return m
