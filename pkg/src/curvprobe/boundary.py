"""Linear travel from an input to the nearest decision-boundary crossing along a direction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calibration import bin_index
from .directions import DirectionMode, clip01, make_direction, sample_rng
from .errors import CurvprobeError, MisclassifiedInputError
from .parallel import map_samples
from .zoo import Classifier, label_confidence, outputs


@dataclass(frozen=True)
class TravelParams:
    eps_i: float = 1e-3
    eps_d: float = 0.9
    eps_t: float = 0.01
    max_iter: int = 200
    eps_max: float = 1.0
    literal: bool = False

    def __post_init__(self):
        if not self.eps_i > 0 or not self.eps_t > 0:
            raise ValueError("eps_i and eps_t must be positive")
        if not 0 < self.eps_d < 1:
            raise ValueError("eps_d must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class TravelResult:
    eps_star: float  # nan when no crossing was found
    x_prime: np.ndarray
    crossed: bool
    iterations: int
    bracket: tuple[float, float]  # (last correct eps, first incorrect eps)
    probes: list[tuple[float, bool]] = field(default_factory=list, repr=False)


def check_direction_norm(d: np.ndarray, rtol: float = 1e-4) -> None:
    D = d.size
    norm = float(np.linalg.norm(np.asarray(d, dtype=np.float64)))
    if abs(norm - math.sqrt(D)) > rtol * math.sqrt(D):
        raise ValueError(f"direction norm {norm:.6g} differs from sqrt(D) = {math.sqrt(D):.6g}")


def predicted_label(model: Classifier, x: np.ndarray) -> int:
    logits, _ = outputs(model, x[None])
    return int(label_confidence(logits)[0][0])


def travel_to_boundary(model: Classifier, x: np.ndarray, y: int, d: np.ndarray,
                       params: TravelParams = TravelParams(), check_start: bool = True) -> TravelResult:
    """Smallest ``eps`` such that ``clip(x + eps * d)`` is misclassified.

    The length doubles while the traveled image is still classified as ``y``
    and decays by ``eps_d`` once it is misclassified. After the first
    misclassification every probe stays strictly inside the current bracket;
    a proposal that would leave it is replaced by the bracket midpoint. The
    search stops when the relative bracket width drops below ``eps_t``, after
    ``max_iter`` probes, or (before any crossing) when ``eps`` exceeds
    ``eps_max``.
    """
    x = np.asarray(x, dtype=np.float32)
    d = np.asarray(d, dtype=np.float32)
    if d.shape != x.shape:
        raise ValueError(f"direction shape {d.shape} does not match input shape {x.shape}")
    check_direction_norm(d)
    if check_start and predicted_label(model, x) != y:
        raise MisclassifiedInputError("travel requires a correctly classified input")
    if params.literal:
        return _travel_literal(model, x, y, d, params)

    lo, hi = 0.0, math.inf
    best = x
    eps = params.eps_i
    probes: list[tuple[float, bool]] = []
    last = x
    while len(probes) < params.max_iter:
        if math.isinf(hi) and eps > params.eps_max:
            break
        xp = clip01(x + np.float32(eps) * d)
        last = xp
        wrong = predicted_label(model, xp) != y
        probes.append((eps, wrong))
        if wrong:
            if eps < hi:
                hi, best = eps, xp
            proposal = eps * params.eps_d
        else:
            lo = max(lo, eps)
            proposal = eps + eps
        if not math.isinf(hi):
            if (hi - lo) / hi < params.eps_t:
                break
            if not lo < proposal < hi:
                proposal = 0.5 * (lo + hi)
        eps = proposal

    crossed = not math.isinf(hi)
    return TravelResult(
        eps_star=hi if crossed else math.nan,
        x_prime=best if crossed else last,
        crossed=crossed,
        iterations=len(probes),
        bracket=(lo, hi),
        probes=probes,
    )


def _travel_literal(model, x, y, d, params: TravelParams) -> TravelResult:
    """The grow/decay loop with its original ``while eps < eps_t`` condition.

    Returns the last traveled image; ``eps_t`` acts as an absolute length here.
    """
    eps = params.eps_i
    probes = []
    xp = x
    last_eps = math.nan
    while eps < params.eps_t and len(probes) < params.max_iter:
        xp = clip01(x + np.float32(eps) * d)
        wrong = predicted_label(model, xp) != y
        probes.append((eps, wrong))
        last_eps = eps
        eps = eps * params.eps_d if wrong else eps + eps
    crossed = bool(probes) and probes[-1][1]
    wrong_eps = [e for e, w in probes if w]
    right_eps = [e for e, w in probes if not w]
    return TravelResult(
        eps_star=last_eps if crossed else math.nan,
        x_prime=xp,
        crossed=crossed,
        iterations=len(probes),
        bracket=(max(right_eps, default=0.0), min(wrong_eps, default=math.inf)),
        probes=probes,
    )


def travel_sample(model: Classifier, x: np.ndarray, y: int, mode: DirectionMode, params: TravelParams,
                  sample_id: int = 0) -> tuple[np.ndarray, np.ndarray, TravelResult]:
    """Build the direction for ``mode`` and travel from its start point."""
    rng = sample_rng(mode.seed, sample_id)
    x0, d = make_direction(model, x, y, mode, rng)
    check = mode.tag in ("fgsm", "rand", "fgsm_perp")
    if not check and predicted_label(model, x0) != y:
        # the jump itself already crossed the boundary
        return x0, d, TravelResult(0.0, x0, True, 0, (0.0, 0.0))
    return x0, d, travel_to_boundary(model, x0, y, d, params, check_start=check)


def epsilon_vs_confidence(model: Classifier, images: np.ndarray, labels: np.ndarray,
                          mode: DirectionMode = DirectionMode("fgsm"),
                          params: TravelParams = TravelParams(), k: int = 10,
                          sample_ids=None, jobs: int = 1) -> dict:
    """Per-sample boundary lengths against confidence, with per-confidence-bin averages.

    Misclassified samples are skipped and counted. Returns a dict with
    ``rows``, ``bins`` and ``skipped``.
    """
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    ids = np.arange(len(labels)) if sample_ids is None else np.asarray(sample_ids)
    logits, _ = outputs(model, images)
    pred, conf = label_confidence(logits) if len(labels) else (np.zeros(0, int), np.zeros(0))
    keep = np.flatnonzero(pred == labels)

    def job(i):
        try:
            _, _, res = travel_sample(model, images[i], int(labels[i]), mode, params, int(ids[i]))
            return {"sample_id": int(ids[i]), "label": int(labels[i]), "confidence": float(conf[i]),
                    "eps_star": res.eps_star, "crossed": res.crossed, "iterations": res.iterations, "error": ""}
        except CurvprobeError as exc:
            return {"sample_id": int(ids[i]), "label": int(labels[i]), "confidence": float(conf[i]),
                    "eps_star": math.nan, "crossed": False, "iterations": 0, "error": type(exc).__name__}

    rows = map_samples(job, keep, jobs)
    rows.sort(key=lambda r: r["sample_id"])
    bins = []
    if rows:
        c = np.array([r["confidence"] for r in rows])
        e = np.array([r["eps_star"] for r in rows])
        ok = np.array([r["crossed"] for r in rows])
        b = bin_index(c, k)
        for i in range(k):
            sel = (b == i) & ok
            bins.append({"bin": i, "lo": i / k, "hi": (i + 1) / k, "count": int(sel.sum()),
                         "mean_eps": float(e[sel].mean()) if sel.any() else math.nan})
    return {"rows": rows, "bins": bins, "skipped": int(len(labels) - len(keep))}
