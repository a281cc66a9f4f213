"""FGSM / I-FGSM attacks, the random-jump attack, PSNR, and robustness by curvedness."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boundary import TravelParams, predicted_label, travel_to_boundary
from .directions import (
    clip01,
    fgsm_direction,
    input_gradient,
    random_direction,
    sample_rng,
    sign_direction,
)
from .errors import CurvprobeError, MisclassifiedInputError
from .parallel import map_samples
from .zoo import Classifier, label_confidence, outputs

KINDS = ("fgsm", "ifgsm", "fgsm_travel", "rand_jump_fgsm")
PSNR_IDENTICAL_DB = 99.0


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "ifgsm"
    eps: float = 0.002
    iters: int = 10
    eps_r: float = 0.05
    seed: int = 0
    travel: TravelParams = TravelParams()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if self.eps < 0 or self.eps_r < 0:
            raise ValueError("attack budgets must be non-negative")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")

    @property
    def step(self) -> float:
        return self.eps / self.iters


@dataclass
class AttackResult:
    x_adv: np.ndarray
    success: bool
    eps_used: float  # root-mean-square perturbation ||x_adv - x||_2 / sqrt(D)
    psnr_db: float
    label_before: int
    label_after: int
    eps_travel: float = math.nan  # boundary length of the linear travel, when one was run
    aborted: bool = False


def psnr(x: np.ndarray, y: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give the 99 dB sentinel."""
    mse = float(np.mean((np.asarray(x, np.float64) - np.asarray(y, np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL_DB
    return 10.0 * math.log10(peak * peak / mse)


def rms(delta: np.ndarray) -> float:
    delta = np.asarray(delta, dtype=np.float64)
    return float(np.linalg.norm(delta) / math.sqrt(delta.size))


def _result(model, x, y, x_adv, label_before, **kw) -> AttackResult:
    after = predicted_label(model, x_adv)
    return AttackResult(x_adv, after != y, rms(x_adv - x), psnr(x, x_adv), label_before, after, **kw)


def ball_bounds(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """float32 bounds of the l-inf ball around ``x`` that never exceed ``eps`` in exact arithmetic.

    ``x +- eps`` is formed in float64 and rounded to float32; entries that
    rounded away from ``x`` are moved back one ulp at a time.
    """
    x64 = np.asarray(x, dtype=np.float64)
    hi = (x64 + eps).astype(np.float32)
    lo = (x64 - eps).astype(np.float32)
    while np.any(over := hi.astype(np.float64) - x64 > eps):
        hi = np.where(over, np.nextafter(hi, np.float32(-np.inf)), hi)
    while np.any(over := x64 - lo.astype(np.float64) > eps):
        lo = np.where(over, np.nextafter(lo, np.float32(np.inf)), lo)
    return lo, hi


def fgsm(model: Classifier, x: np.ndarray, y: int, eps: float) -> np.ndarray:
    """Single-step ``clip(x + eps * sign(grad))``, kept inside the exact l-inf ball."""
    x = np.asarray(x, dtype=np.float32)
    s = sign_direction(input_gradient(model, x, y))
    lo, hi = ball_bounds(x, eps)
    return clip01(np.clip(x + np.float32(eps) * s, lo, hi))


def ifgsm(model: Classifier, x: np.ndarray, y: int, cfg: AttackConfig, check_start: bool = True) -> AttackResult:
    """Iterated FGSM projected onto the l-inf ball of radius ``cfg.eps`` around ``x``."""
    x = np.asarray(x, dtype=np.float32)
    before = predicted_label(model, x)
    if check_start and before != y:
        raise MisclassifiedInputError("attack requires a correctly classified input")
    step = np.float32(cfg.step)
    lo, hi = ball_bounds(x, cfg.eps)
    x_adv = x.copy()
    for _ in range(cfg.iters):
        g = input_gradient(model, x_adv, y)
        if not np.all(np.isfinite(g)):
            return _result(model, x, y, x_adv, before, aborted=True)
        x_adv = clip01(np.clip(x_adv + step * sign_direction(g), lo, hi))
    return _result(model, x, y, x_adv, before)


def fgsm_travel_attack(model: Classifier, x: np.ndarray, y: int, cfg: AttackConfig) -> AttackResult:
    """Minimal linear travel along the FGSM direction to the decision boundary."""
    x = np.asarray(x, dtype=np.float32)
    before = predicted_label(model, x)
    if before != y:
        raise MisclassifiedInputError("attack requires a correctly classified input")
    res = travel_to_boundary(model, x, y, fgsm_direction(model, x, y), cfg.travel, check_start=False)
    return _result(model, x, y, res.x_prime, before, eps_travel=res.eps_star)


def rand_jump_attack(model: Classifier, x: np.ndarray, y: int, cfg: AttackConfig, sample_id: int = 0) -> AttackResult:
    """Random jump of size ``eps_r``, then FGSM boundary travel from the jumped point.

    Perturbation size and PSNR are measured against the original ``x`` and so
    include the jump.
    """
    x = np.asarray(x, dtype=np.float32)
    before = predicted_label(model, x)
    if before != y:
        raise MisclassifiedInputError("attack requires a correctly classified input")
    if cfg.eps_r == 0:
        return fgsm_travel_attack(model, x, y, cfg)
    r = random_direction(x.shape, sample_rng(cfg.seed, sample_id))
    x0 = clip01(x + np.float32(cfg.eps_r) * r)
    if predicted_label(model, x0) != y:
        return _result(model, x, y, x0, before, eps_travel=0.0)
    res = travel_to_boundary(model, x0, y, fgsm_direction(model, x0, y), cfg.travel, check_start=False)
    return _result(model, x, y, res.x_prime, before, eps_travel=res.eps_star)


def attack(model: Classifier, x: np.ndarray, y: int, cfg: AttackConfig, sample_id: int = 0) -> AttackResult:
    if cfg.kind == "ifgsm":
        return ifgsm(model, x, y, cfg)
    if cfg.kind == "fgsm":
        x = np.asarray(x, dtype=np.float32)
        before = predicted_label(model, x)
        if before != y:
            raise MisclassifiedInputError("attack requires a correctly classified input")
        return _result(model, x, y, fgsm(model, x, y, cfg.eps), before)
    if cfg.kind == "fgsm_travel":
        return fgsm_travel_attack(model, x, y, cfg)
    return rand_jump_attack(model, x, y, cfg, sample_id)


def attack_dataset(model: Classifier, images, labels, cfg: AttackConfig, theta1=None,
                   sample_ids=None, jobs: int = 1) -> list[dict]:
    """attacks.csv rows for the correctly classified samples."""
    model.eval()
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    ids = np.arange(len(labels)) if sample_ids is None else np.asarray(sample_ids)
    theta1 = theta1 or {}
    keep = []
    if len(labels):
        pred, _ = label_confidence(outputs(model, images)[0])
        keep = np.flatnonzero(pred == labels)

    def job(i):
        sid = int(ids[i])
        row = {"sample_id": sid, "kind": cfg.kind, "eps_budget": cfg.eps if cfg.kind in ("fgsm", "ifgsm") else math.nan}
        try:
            res = attack(model, images[i], int(labels[i]), cfg, sid)
        except CurvprobeError as exc:
            row.update(eps_used=math.nan, psnr_db=math.nan, success=False, label_before=int(labels[i]),
                       label_after=-1, theta1=theta1.get(sid, math.nan), eps_travel=math.nan,
                       error=type(exc).__name__)
            return row
        row.update(eps_used=res.eps_used, psnr_db=res.psnr_db, success=res.success, label_before=res.label_before,
                   label_after=res.label_after, theta1=theta1.get(sid, math.nan), eps_travel=res.eps_travel,
                   error="aborted" if res.aborted else "")
        return row

    rows = map_samples(job, keep, jobs)
    rows.sort(key=lambda r: r["sample_id"])
    return rows


def robustness_by_curvedness(rows: list[dict], bins: int = 10, theta_max: float = math.pi) -> dict:
    """Accuracy after attack per theta_1 bin over [0, theta_max], plus overall accuracy.

    ``rows`` are attack rows (see :func:`attack_dataset`) carrying ``theta1``
    and ``success``; rows without a finite theta_1 count toward the overall
    accuracy only.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    success = np.array([bool(r["success"]) for r in rows], dtype=bool)
    th = np.array([r.get("theta1", math.nan) for r in rows], dtype=np.float64)
    overall = float(1.0 - success.mean()) if rows else math.nan
    ok = np.isfinite(th)
    idx = np.clip(np.floor(th[ok] / theta_max * bins).astype(np.int64), 0, bins - 1)
    surv = ~success[ok]
    table = []
    for b in range(bins):
        sel = idx == b
        n = int(sel.sum())
        table.append({"bin": b, "theta_lo": b * theta_max / bins, "theta_hi": (b + 1) * theta_max / bins,
                      "count": n, "accuracy": float(surv[sel].mean()) if n else math.nan})
    return {"bins": table, "overall_accuracy": overall, "n": len(rows)}


def jump_dominance(jump_rows: list[dict], travel_rows: list[dict], threshold: float = math.pi / 4) -> dict:
    """Median total perturbation of the random-jump attack vs plain FGSM travel on curved samples."""
    travel = {r["sample_id"]: r for r in travel_rows}
    pairs = [(r, travel[r["sample_id"]]) for r in jump_rows
             if r["sample_id"] in travel and np.isfinite(r.get("theta1", math.nan)) and r["theta1"] >= threshold
             and r["success"] and travel[r["sample_id"]]["success"]]
    if not pairs:
        return {"n": 0, "median_jump": math.nan, "median_fgsm": math.nan, "holds": False}
    mj = float(np.median([a["eps_used"] for a, _ in pairs]))
    mf = float(np.median([b["eps_used"] for _, b in pairs]))
    return {"n": len(pairs), "median_jump": mj, "median_fgsm": mf, "holds": mj <= mf}
