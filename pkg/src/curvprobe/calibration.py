"""Confidence binning, ECE and signed ECE, reliability-diagram rows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CalibrationBin:
    lo: float
    hi: float
    count: int
    fraction: float  # share of all predictions falling in this bin
    accuracy: float
    confidence: float


@dataclass(frozen=True)
class CalibrationReport:
    bins: tuple[CalibrationBin, ...]
    ece: float
    sece: float
    n: int

    @property
    def k(self) -> int:
        return len(self.bins)


def bin_index(confidence: np.ndarray, k: int) -> np.ndarray:
    """Bin of each confidence for edges (0, 1/k], (1/k, 2/k], ..., ((k-1)/k, 1]."""
    edges = np.arange(k + 1) / k
    # compare against the edges themselves; ceil(c * k) misbins c = 0.3, k = 10
    idx = np.searchsorted(edges, np.asarray(confidence, dtype=np.float64), side="left") - 1
    return np.clip(idx, 0, k - 1)


def calibrate(confidence, correct, k: int = 10) -> CalibrationReport:
    """Bin predictions by confidence and compute ECE and sECE.

    ``sECE`` is positive for underconfident predictions (accuracy above
    confidence) and negative for overconfident ones. Empty bins carry zero
    accuracy and confidence and contribute nothing.
    """
    conf = np.asarray(confidence, dtype=np.float64).reshape(-1)
    hit = np.asarray(correct, dtype=np.float64).reshape(-1)
    if conf.size == 0:
        raise ValueError("calibrate needs at least one prediction")
    if conf.shape != hit.shape:
        raise ValueError(f"{conf.size} confidences vs {hit.size} correctness flags")
    if k < 1:
        raise ValueError("bin count must be >= 1")
    if np.any(~np.isfinite(conf)) or np.any(conf <= 0.0) or np.any(conf > 1.0):
        raise ValueError("confidences must lie in (0, 1]")

    idx = bin_index(conf, k)
    counts = np.bincount(idx, minlength=k)
    acc_sum = np.bincount(idx, weights=hit, minlength=k)
    conf_sum = np.bincount(idx, weights=conf, minlength=k)
    n = conf.size

    bins = []
    ece = sece = 0.0
    for i in range(k):
        c = int(counts[i])
        if c:
            o, e = acc_sum[i] / c, conf_sum[i] / c
            p = c / n
            ece += p * abs(o - e)
            sece += p * (o - e)
        else:
            o = e = p = 0.0
        bins.append(CalibrationBin(i / k, (i + 1) / k, c, p, float(o), float(e)))
    return CalibrationReport(tuple(bins), float(ece), float(sece), n)


def calibrate_logits(logits: np.ndarray, labels: np.ndarray, k: int = 10) -> CalibrationReport:
    from .zoo import label_confidence

    pred, conf = label_confidence(logits)
    return calibrate(conf, pred == np.asarray(labels), k)


def reliability_rows(report: CalibrationReport) -> list[dict]:
    """One row per bin: center, accuracy, mean confidence, count."""
    return [
        {
            "bin_center": (b.lo + b.hi) / 2,
            "accuracy": b.accuracy,
            "mean_confidence": b.confidence,
            "count": b.count,
        }
        for b in report.bins
    ]


def report_rows(report: CalibrationReport) -> list[dict]:
    return [
        {"bin": i, "lo": b.lo, "hi": b.hi, "count": b.count, "P": b.fraction, "acc": b.accuracy, "conf": b.confidence}
        for i, b in enumerate(report.bins)
    ]
