"""Input-space travel directions: FGSM sign, random, orthogonal, and jump variants.

All directions are scaled so that ``||d||_2 = sqrt(D)`` with ``D`` the input
dimension, which is what a +-1 sign vector has automatically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DegenerateGradientError, OrthogonalizationError
from .zoo import Classifier

MODES = ("fgsm", "rand", "fgsm_perp", "rand_jump_fgsm", "fgsm_jump_fgsm")


@dataclass(frozen=True)
class DirectionMode:
    tag: str = "fgsm"
    eps_r: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.tag not in MODES:
            raise ValueError(f"unknown direction mode {self.tag!r}; expected one of {MODES}")
        if self.eps_r < 0:
            raise ValueError("jump magnitude eps_r must be >= 0")


def sample_rng(seed: int, sample_id: int, stream: int = 0) -> np.random.Generator:
    """Generator keyed by (seed, sample, stream) so results do not depend on job order."""
    return np.random.default_rng([int(seed), int(sample_id), int(stream)])


def clip01(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def input_gradient(model: Classifier, x: np.ndarray, y) -> np.ndarray:
    """Gradient of the summed cross-entropy w.r.t. a batch of inputs (inference mode)."""
    x = np.asarray(x, dtype=np.float32)
    single = x.ndim == 3
    xb = x[None] if single else x
    yb = np.atleast_1d(np.asarray(y, dtype=np.int64))
    was_training = model.training
    model.eval()
    try:
        xt = T.Tensor(xb, requires_grad=True)
        logits, _ = model(xt)
        loss = T.cross_entropy(logits, yb, reduction="sum")
        (g,) = T.gradients(loss, [xt])
    finally:
        model.train(was_training)
    return g[0] if single else g


def sign_direction(grad: np.ndarray) -> np.ndarray:
    """sign(grad) with zero components mapped to +1."""
    return np.where(grad < 0, -1.0, 1.0).astype(np.float32)


def fgsm_direction(model: Classifier, x: np.ndarray, y: int) -> np.ndarray:
    """Sign of the input gradient of the cross-entropy loss at ``x`` (one sample)."""
    g = input_gradient(model, x, y)
    if not np.all(np.isfinite(g)):
        raise DegenerateGradientError("input gradient contains NaN or inf")
    if not np.any(g):
        raise DegenerateGradientError("input gradient is identically zero")
    return sign_direction(g)


def random_direction(shape, rng: np.random.Generator) -> np.ndarray:
    """Standard Gaussian rescaled to norm sqrt(D)."""
    r = rng.standard_normal(size=shape)
    r *= np.sqrt(r.size) / np.linalg.norm(r)
    return r.astype(np.float32)


def orthogonal_direction(d: np.ndarray, rng: np.random.Generator, attempts: int = 8) -> np.ndarray:
    """Random direction orthogonal to ``d``, norm sqrt(D)."""
    dd = np.asarray(d, dtype=np.float64).reshape(-1)
    D = dd.size
    dn = dd / np.linalg.norm(dd)
    for _ in range(attempts):
        r = rng.standard_normal(size=D)
        r -= (r @ dn) * dn
        norm = np.linalg.norm(r)
        if norm < 1e-6 * np.sqrt(D):
            continue
        out = (r * (np.sqrt(D) / norm)).astype(np.float32)
        if abs(float(out.astype(np.float64) @ dd)) <= 1e-4 * D:
            return out.reshape(np.shape(d))
    raise OrthogonalizationError(f"no orthogonal direction found after {attempts} attempts")


def make_direction(model: Classifier, x: np.ndarray, y: int, mode: DirectionMode,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(x0, d)``: the travel start (jumped for jump modes) and the direction.

    Jumped starts are clipped to [0, 1].
    """
    x = np.asarray(x, dtype=np.float32)
    tag = mode.tag
    if tag == "fgsm":
        return x, fgsm_direction(model, x, y)
    if tag == "rand":
        return x, random_direction(x.shape, rng)
    if tag == "fgsm_perp":
        return x, orthogonal_direction(fgsm_direction(model, x, y), rng)
    r = random_direction(x.shape, rng)
    x_r = clip01(x + np.float32(mode.eps_r) * r)
    if tag == "rand_jump_fgsm":
        return x_r, fgsm_direction(model, x_r, y)
    # fgsm_jump_fgsm: jump from x along the FGSM direction found at the randomly jumped point
    jump = fgsm_direction(model, x_r, y)
    x0 = clip01(x + np.float32(mode.eps_r) * jump)
    return x0, fgsm_direction(model, x0, y)
