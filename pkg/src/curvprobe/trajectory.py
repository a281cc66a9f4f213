"""Feature-space trajectories of linear input-space travel.

An input is moved in ``N`` equal steps along a direction; for each step the
penultimate feature moves by ``dz_n = z_n - z_{n-1}``. The step magnitude
``omega_n = ||dz_n||`` and the turn ``theta_n`` between ``dz_n`` and
``dz_{n+1}`` describe how curved the representation space is around the
input. ``theta_1`` is the scalar curvedness measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boundary import TravelParams, travel_sample
from .directions import DirectionMode, clip01, make_direction, sample_rng
from .errors import CurvprobeError
from .parallel import map_samples
from .zoo import Classifier, label_confidence, outputs

# below this spread, angles are float32 rounding noise and carry no signal
ANGLE_TOL = 1e-5


@dataclass
class TrajectoryRecord:
    sample_id: int
    mode: str
    n_steps: int
    epsilon: float
    omega: np.ndarray  # (N,)
    theta: np.ndarray  # (N-1,), nan where a step has zero length
    z_start: np.ndarray = field(repr=False)
    z_end: np.ndarray = field(repr=False)
    confidence: float = math.nan
    crossed: bool = False
    seed: int = 0

    @property
    def repr_distance(self) -> float:
        return float(np.linalg.norm(self.z_end.astype(np.float64) - self.z_start.astype(np.float64)))

    @property
    def theta1(self) -> float:
        return float(self.theta[0]) if self.theta.size else math.nan

    @property
    def total_turn(self) -> float:
        finite = self.theta[np.isfinite(self.theta)]
        return float(finite.sum())

    @property
    def missing_theta(self) -> int:
        return int(np.count_nonzero(~np.isfinite(self.theta)))

    @property
    def path_length(self) -> float:
        return float(self.omega.sum())


def step_geometry(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Step magnitudes and turning angles of a feature path ``z`` of shape (N+1, F)."""
    z = np.asarray(z, dtype=np.float64)
    dz = np.diff(z, axis=0)
    omega = np.linalg.norm(dz, axis=1)
    a, b = dz[:-1], dz[1:]
    denom = omega[:-1] * omega[1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.einsum("ij,ij->i", a, b) / denom
    theta = np.arccos(np.clip(cos, -1.0, 1.0))
    theta[denom == 0] = np.nan
    return omega, theta


def travel_points(x0: np.ndarray, d: np.ndarray, n_steps: int, epsilon: float) -> np.ndarray:
    """``clip(x0 + n * (epsilon / N) * d)`` for n = 0..N, stacked."""
    x0 = np.asarray(x0, dtype=np.float32)
    d = np.asarray(d, dtype=np.float32)
    coef = (np.arange(n_steps + 1, dtype=np.float64) * (epsilon / n_steps)).astype(np.float32)
    pts = x0[None] + coef.reshape((-1,) + (1,) * x0.ndim) * d[None]
    return clip01(pts)


def run_trajectory(model: Classifier, x0: np.ndarray, d: np.ndarray, n_steps: int, epsilon: float,
                   label: int | None = None, sample_id: int = 0, mode: str = "fgsm", seed: int = 0) -> TrajectoryRecord:
    if n_steps < 2:
        raise ValueError("a trajectory needs at least two steps")
    if not epsilon >= 0:
        raise ValueError("travel length must be non-negative")
    logits, z = outputs(model, travel_points(x0, d, n_steps, epsilon))
    omega, theta = step_geometry(z)
    pred, conf = label_confidence(logits)
    crossed = bool(label is not None and pred[-1] != label)
    return TrajectoryRecord(sample_id, mode, n_steps, float(epsilon), omega, theta, z[0], z[-1],
                            float(conf[0]), crossed, seed)


def trajectory_sample(model: Classifier, x: np.ndarray, y: int, mode: DirectionMode, n_steps: int = 50,
                      step: float | None = 0.002, params: TravelParams = TravelParams(),
                      sample_id: int = 0) -> TrajectoryRecord:
    """Trajectory for one sample.

    With ``step`` set the travel length is ``n_steps * step``; with
    ``step=None`` it is the boundary length found by boundary travel.
    """
    if step is None:
        x0, d, res = travel_sample(model, x, y, mode, params, sample_id)
        eps = res.eps_star if res.crossed else params.eps_max
    else:
        x0, d = make_direction(model, x, y, mode, sample_rng(mode.seed, sample_id))
        eps = n_steps * step
    rec = run_trajectory(model, x0, d, n_steps, eps, y, sample_id, mode.tag, mode.seed)
    # confidence of the original (un-jumped) input
    _, conf = label_confidence(outputs(model, np.asarray(x, np.float32)[None])[0])
    rec.confidence = float(conf[0])
    return rec


def theta1(model: Classifier, x: np.ndarray, y: int, step: float = 0.002,
           mode: DirectionMode = DirectionMode("fgsm"), sample_id: int = 0) -> float:
    """First turning angle using only the first two steps of size ``step``."""
    x0, d = make_direction(model, x, y, mode, sample_rng(mode.seed, sample_id))
    return run_trajectory(model, x0, d, 2, 2 * step, y).theta1


def trajectories(model: Classifier, images, labels, modes, n_steps: int = 50, step: float | None = 0.002,
                 params: TravelParams = TravelParams(), sample_ids=None, jobs: int = 1,
                 only_correct: bool = True) -> tuple[list[TrajectoryRecord], list[dict]]:
    """Records for every (sample, mode); failures are returned separately."""
    model.eval()
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    ids = np.arange(len(labels)) if sample_ids is None else np.asarray(sample_ids)
    keep = np.arange(len(labels))
    if only_correct and len(labels):
        pred, _ = label_confidence(outputs(model, images)[0])
        keep = np.flatnonzero(pred == labels)
    jobs_list = [(i, m) for i in keep for m in modes]

    def job(k):
        i, m = jobs_list[k]
        try:
            return trajectory_sample(model, images[i], int(labels[i]), m, n_steps, step, params, int(ids[i]))
        except CurvprobeError as exc:
            return {"sample_id": int(ids[i]), "mode": m.tag, "seed": m.seed, "error": type(exc).__name__}

    out = map_samples(job, range(len(jobs_list)), jobs)
    records = [r for r in out if isinstance(r, TrajectoryRecord)]
    failures = [r for r in out if isinstance(r, dict)]
    records.sort(key=lambda r: (r.sample_id, r.mode, r.seed))
    return records, failures


# -- statistics ---------------------------------------------------------------------
def pearson(a, b, tol: float = ANGLE_TOL) -> float:
    """Pearson correlation, nan when either side has (numerically) no spread."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ok = np.isfinite(a) & np.isfinite(b)
    a, b = a[ok], b[ok]
    if a.size < 2 or np.ptp(a) <= tol or np.ptp(b) <= tol:
        return math.nan
    return float(np.corrcoef(a, b)[0, 1])


def curvedness_stats(records: list[TrajectoryRecord], early: int = 4, paired: list[TrajectoryRecord] | None = None) -> dict:
    """Summary tables over trajectory records.

    Returns a dict with ``correlation`` (theta_1 vs total turn per mode),
    ``early_steps`` (first ``early`` thetas and omegas per record),
    ``theta1_pairs`` (theta_1 under two direction seeds, when ``paired`` is
    given), ``joint`` (confidence, distance, theta_1) and ``whole``
    (sum-normalized omegas and thetas per record).
    """
    if len(records) < 2:
        raise ValueError("curvedness statistics need at least two records")
    modes = sorted({r.mode for r in records})
    correlation = []
    for m in modes:
        rs = [r for r in records if r.mode == m]
        correlation.append({
            "mode": m,
            "n": len(rs),
            "pearson": pearson([r.theta1 for r in rs], [r.total_turn for r in rs]),
        })

    early_rows = []
    for r in records:
        row = {"sample_id": r.sample_id, "mode": r.mode}
        for n in range(early):
            row[f"theta{n + 1}"] = float(r.theta[n]) if n < r.theta.size else math.nan
        for n in range(early):
            row[f"omega{n + 1}"] = float(r.omega[n]) if n < r.omega.size else math.nan
        early_rows.append(row)

    joint = [{"sample_id": r.sample_id, "mode": r.mode, "confidence": r.confidence,
              "repr_distance": r.repr_distance, "theta1": r.theta1} for r in records]

    whole = []
    for r in records:
        total = r.path_length
        whole.append({
            "sample_id": r.sample_id,
            "mode": r.mode,
            "omega_sum": total,
            "omega_norm": (r.omega / total) if total > 0 else np.full_like(r.omega, np.nan),
            "theta": r.theta.copy(),
        })

    out = {"correlation": correlation, "early_steps": early_rows, "joint": joint, "whole": whole}
    if paired is not None:
        out["theta1_pairs"] = theta1_pairs(records, paired)
    return out


def theta1_pairs(a: list[TrajectoryRecord], b: list[TrajectoryRecord]) -> list[dict]:
    """Match records by (sample, mode) and pair their theta_1 values."""
    lookup = {(r.sample_id, r.mode): r for r in b}
    rows = []
    for r in a:
        other = lookup.get((r.sample_id, r.mode))
        if other is not None:
            rows.append({"sample_id": r.sample_id, "mode": r.mode, "seed_a": r.seed, "seed_b": other.seed,
                         "theta1_a": r.theta1, "theta1_b": other.theta1})
    return rows


def boundary_distance_report(model: Classifier, images, labels, modes, n_steps: int = 50,
                             params: TravelParams = TravelParams(), sample_ids=None, jobs: int = 1) -> dict:
    """Boundary lengths and representation-space distances per sample and mode.

    ``repr_distance`` is measured from the travel start ``z^(0)``;
    ``repr_distance_orig`` from the feature of the original, un-jumped input.
    Also pairs the FGSM boundary length with the random-jump one per sample.
    """
    model.eval()
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    ids = np.arange(len(labels)) if sample_ids is None else np.asarray(sample_ids)
    keep = np.arange(len(labels))
    conf = np.zeros(len(labels))
    z_orig = None
    if len(labels):
        logits, z_orig = outputs(model, images)
        pred, conf = label_confidence(logits)
        keep = np.flatnonzero(pred == labels)
    jobs_list = [(i, m) for i in keep for m in modes]

    def job(k):
        i, m = jobs_list[k]
        row = {"sample_id": int(ids[i]), "mode": m.tag, "confidence": float(conf[i])}
        try:
            x0, d, res = travel_sample(model, images[i], int(labels[i]), m, params, int(ids[i]))
        except CurvprobeError as exc:
            row.update(eps_star=math.nan, crossed=False, repr_distance=math.nan, repr_distance_orig=math.nan,
                       theta1=math.nan, error=type(exc).__name__)
            return row
        if res.crossed and res.eps_star > 0:
            rec = run_trajectory(model, x0, d, n_steps, res.eps_star, int(labels[i]), int(ids[i]), m.tag)
            dist, th1 = rec.repr_distance, rec.theta1
            dist_orig = float(np.linalg.norm(rec.z_end.astype(np.float64) - z_orig[i].astype(np.float64)))
        elif res.crossed:
            z0 = outputs(model, x0[None])[1][0]
            dist, th1 = 0.0, math.nan
            dist_orig = float(np.linalg.norm(z0.astype(np.float64) - z_orig[i].astype(np.float64)))
        else:
            dist = dist_orig = th1 = math.nan
        row.update(eps_star=res.eps_star, crossed=res.crossed, repr_distance=dist,
                   repr_distance_orig=dist_orig, theta1=th1, error="")
        return row

    rows = map_samples(job, range(len(jobs_list)), jobs)
    rows.sort(key=lambda r: (r["sample_id"], r["mode"]))
    by = {(r["sample_id"], r["mode"]): r for r in rows}
    pairs = []
    for sid in sorted({r["sample_id"] for r in rows}):
        a, b = by.get((sid, "fgsm")), by.get((sid, "rand_jump_fgsm"))
        if a is not None and b is not None:
            pairs.append({"sample_id": sid, "eps_fgsm": a["eps_star"], "eps_rand_jump_fgsm": b["eps_star"],
                          "theta1_fgsm": a["theta1"]})
    return {"rows": rows, "jump_pairs": pairs}
