"""FRR / FAR curves, equal error rate and average error rate.

A sample is accepted when its score is at or above the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyScores

THRESHOLD_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class ErrorCurves:
    thresholds: np.ndarray
    frr: np.ndarray
    far: np.ndarray

    def check(self) -> None:
        assert np.all(np.diff(self.thresholds) > 0)
        assert np.all(np.diff(self.frr) >= 0), "FRR must be non-decreasing"
        assert np.all(np.diff(self.far) <= 0), "FAR must be non-increasing"


def compute_curves(genuine_scores, forgery_scores, grid: int | None = None) -> ErrorCurves:
    """Sweep thresholds over the distinct scores plus ``0`` and ``1 + eps``.

    With ``grid`` the sweep uses ``grid`` evenly spaced thresholds on
    ``[0, 1]`` instead of the distinct scores.
    """
    g = np.sort(np.asarray(genuine_scores, dtype=np.float64))
    f = np.sort(np.asarray(forgery_scores, dtype=np.float64))
    if g.size == 0 or f.size == 0:
        raise EmptyScores("both genuine and forgery scores are required")
    base = np.concatenate([g, f]) if grid is None else np.linspace(0.0, 1.0, grid)
    thr = np.unique(np.concatenate([base, [0.0, 1.0 + THRESHOLD_EPS]]))
    frr = np.searchsorted(g, thr, side="left") / g.size
    far = (f.size - np.searchsorted(f, thr, side="left")) / f.size
    return ErrorCurves(thr, frr, far)


def eer_with_threshold(curves: ErrorCurves) -> tuple[float, float]:
    """EER and the threshold where the linearly interpolated curves cross."""
    d = curves.frr - curves.far
    i = int(np.argmax(d >= 0))
    if d[i] == 0 or i == 0:
        return float(curves.frr[i]), float(curves.thresholds[i])
    alpha = -d[i - 1] / (d[i] - d[i - 1])
    eer = curves.frr[i - 1] + alpha * (curves.frr[i] - curves.frr[i - 1])
    thr = curves.thresholds[i - 1] + alpha * (curves.thresholds[i] - curves.thresholds[i - 1])
    return float(eer), float(thr)


def compute_eer(curves: ErrorCurves) -> float:
    return eer_with_threshold(curves)[0]


def rates_at(genuine_scores, forgery_scores, threshold: float) -> tuple[float, float]:
    """(FRR, FAR) at one operating threshold."""
    g = np.asarray(genuine_scores, dtype=np.float64)
    f = np.asarray(forgery_scores, dtype=np.float64)
    return float(np.mean(g < threshold)), float(np.mean(f >= threshold))


def compute_aer(frr: float, far_skilled: float, far_random: float) -> float:
    return (frr + far_skilled + far_random) / 3.0
