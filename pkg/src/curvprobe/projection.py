"""Input-space grids around a sample and 2D projections of their features."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .boundary import TravelParams, predicted_label, travel_to_boundary
from .directions import clip01, fgsm_direction, orthogonal_direction, random_direction, sample_rng
from .zoo import Classifier, outputs

logger = logging.getLogger(__name__)

BASES = ("random_orthonormal", "pca_top2")
DEFAULT_ALPHA = 0.1  # grid extent when no boundary length is available


@dataclass(frozen=True)
class GridVizConfig:
    alpha: float | None = None  # None: twice the sample's FGSM boundary length
    n: int = 7
    basis: str = "pca_top2"
    seed: int = 0
    eps_r: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("grid half-width n must be >= 1")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.basis not in BASES:
            raise ValueError(f"unknown basis {self.basis!r}; expected one of {BASES}")


@dataclass
class GridFeatures:
    z: np.ndarray  # (2n+1, 2n+1, F), indexed [i + n, j + n]
    center: np.ndarray  # the (possibly jumped) grid center in input space
    alpha: float
    n: int

    def at(self, i: int, j: int) -> np.ndarray:
        return self.z[i + self.n, j + self.n]


@dataclass
class Projection:
    points: np.ndarray  # (2n+1, 2n+1, 2)
    basis: np.ndarray  # (F, 2)
    fallback: bool = False  # pca was degenerate; random basis used instead


def grid_inputs(x: np.ndarray, d: np.ndarray, d_perp: np.ndarray, alpha: float, n: int) -> np.ndarray:
    """``clip(x + (alpha i / n) d + (alpha j / n) d_perp)`` for i, j in [-n, n]."""
    steps = (np.arange(-n, n + 1, dtype=np.float64) * (alpha / n)).astype(np.float32)
    shape = (1,) * x.ndim
    a = steps.reshape((-1, 1) + shape) * d[None, None]
    b = steps.reshape((1, -1) + shape) * d_perp[None, None]
    return clip01(x[None, None] + a + b)


def grid_features(model: Classifier, x: np.ndarray, y: int, cfg: GridVizConfig = GridVizConfig(),
                  sample_id: int = 0) -> GridFeatures:
    """Penultimate features on the (2n+1)^2 grid spanned by the FGSM direction and a random orthogonal one.

    With ``cfg.eps_r > 0`` the grid is centered on the randomly jumped input.
    """
    model.eval()
    x = np.asarray(x, dtype=np.float32)
    rng = sample_rng(cfg.seed, sample_id, stream=1)
    if cfg.eps_r > 0:
        x = clip01(x + np.float32(cfg.eps_r) * random_direction(x.shape, rng))
    d = fgsm_direction(model, x, y)
    d_perp = orthogonal_direction(d, rng)
    alpha = cfg.alpha
    if alpha is None:
        alpha = DEFAULT_ALPHA
        if predicted_label(model, x) == y:
            res = travel_to_boundary(model, x, y, d, TravelParams(), check_start=False)
            if res.crossed:
                alpha = 2.0 * res.eps_star
        else:
            logger.warning("grid center is misclassified; using alpha=%g", DEFAULT_ALPHA)
    pts = grid_inputs(x, d, d_perp, alpha, cfg.n)
    side = 2 * cfg.n + 1
    _, z = outputs(model, pts.reshape((side * side,) + x.shape))
    return GridFeatures(z.reshape(side, side, -1), x, float(alpha), cfg.n)


def random_orthonormal(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, 2)))
    return q


def pca_top2(z: np.ndarray, rel_tol: float = 1e-10) -> np.ndarray | None:
    """Top-2 principal directions of the rows of ``z``, or None if rank < 2."""
    z = np.asarray(z, dtype=np.float64).reshape(-1, z.shape[-1])
    zc = z - z.mean(axis=0)
    _, s, vt = np.linalg.svd(zc, full_matrices=False)
    if s.size < 2 or s[0] == 0 or s[1] <= rel_tol * s[0]:
        return None
    return vt[:2].T


def project2d(z: np.ndarray, basis="pca_top2", seed: int = 0) -> Projection:
    """Coordinates of each feature on two orthonormal vectors.

    ``basis`` is a name from ``BASES`` or an explicit (F, 2) array.
    """
    z = np.asarray(z, dtype=np.float64)
    dim = z.shape[-1]
    fallback = False
    if isinstance(basis, str) and basis == "pca_top2":
        b = pca_top2(z)
        if b is None:
            logger.warning("pca basis degenerate (rank < 2); falling back to a random orthonormal basis")
            b, fallback = random_orthonormal(dim, seed), True
    elif isinstance(basis, str) and basis == "random_orthonormal":
        b = random_orthonormal(dim, seed)
    else:
        b = np.asarray(basis, dtype=np.float64)
        if b.shape != (dim, 2):
            raise ValueError(f"explicit basis must have shape ({dim}, 2), got {b.shape}")
    gram = b.T @ b
    if not np.allclose(gram, np.eye(2), atol=1e-6):
        raise ValueError("projection basis is not orthonormal")
    return Projection(z @ b, b, fallback)


def grid_after_jump(model: Classifier, x: np.ndarray, y: int, cfg: GridVizConfig, sample_id: int = 0) -> Projection:
    if not cfg.eps_r > 0:
        raise ValueError("grid_after_jump needs eps_r > 0")
    g = grid_features(model, x, y, cfg, sample_id)
    return project2d(g.z, cfg.basis, cfg.seed)


def planar_residual(z: np.ndarray, basis: np.ndarray) -> float:
    """Relative norm of the centered features left after projecting onto ``basis``."""
    z = np.asarray(z, dtype=np.float64).reshape(-1, basis.shape[0])
    zc = z - z.mean(axis=0)
    total = np.linalg.norm(zc)
    if total == 0:
        return 0.0
    return float(np.linalg.norm(zc - zc @ basis @ basis.T) / total)


def line_residual(points: np.ndarray) -> float:
    """Relative distance of 2D points from their best-fit line."""
    p = np.asarray(points, dtype=np.float64)
    pc = p - p.mean(axis=0)
    total = np.linalg.norm(pc)
    if total == 0:
        return 0.0
    s = np.linalg.svd(pc, compute_uv=False)
    return float(s[-1] / total) if s.size > 1 else 0.0


def spacing_spread(points: np.ndarray) -> float:
    """Relative spread of consecutive distances (0 for equispaced points)."""
    gaps = np.linalg.norm(np.diff(np.asarray(points, np.float64), axis=0), axis=1)
    m = gaps.mean()
    return float((gaps.max() - gaps.min()) / m) if m > 0 else 0.0


def grid_rows(proj: Projection, n: int) -> list[dict]:
    side = 2 * n + 1
    return [{"i": i - n, "j": j - n, "px": float(proj.points[i, j, 0]), "py": float(proj.points[i, j, 1])}
            for i in range(side) for j in range(side)]
