"""Writer-dependent feature reduction.

Each feature row of a writer's FS matrix is treated as a point in
n-dimensional sample space and clustered with k-means; per cluster the member
with the largest mean absolute difference (MAD) is kept.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CatalogueMismatch,
    DataError,
    DimensionMismatch,
    IndexOutOfRange,
    KTooLarge,
    NonFinite,
)
from .features import FeatureSignatureMatrix, FeatureVector, Normalization, zscore_normalize

MAX_ITER = 300
N_INIT = 25


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    k: int
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int
    seed: int
    inertia_trace: list[float] = field(default_factory=list)

    def partition(self) -> frozenset[frozenset[int]]:
        return frozenset(frozenset(np.flatnonzero(self.labels == c).tolist()) for c in range(self.k))


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("mkn,mkn->mk", diff, diff)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = points.shape[0]
    chosen = [int(rng.integers(m))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(m, p=d2 / total))
        else:
            # every remaining point coincides with a centre; pick an unused index
            free = np.setdiff1d(np.arange(m), chosen)
            idx = int(free[rng.integers(free.size)])
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def _repair_empty(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray, k: int) -> None:
    """Move the point farthest from its centroid into each empty cluster (in place)."""
    while True:
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            return
        c = int(empty[0])
        dist = np.sum((points - centroids[labels]) ** 2, axis=1)
        dist[counts[labels] <= 1] = -1.0
        i = int(np.argmax(dist))
        labels[i] = c
        centroids[c] = points[i]


def _update(points: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    cents = np.zeros((k, points.shape[1]))
    np.add.at(cents, labels, points)
    return cents / np.bincount(labels, minlength=k)[:, None]


def _inertia(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    return float(np.sum((points - centroids[labels]) ** 2))


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator):
    centroids = _kmeans_pp(points, k, rng)
    labels = np.argmin(_sq_dists(points, centroids), axis=1)
    trace = []
    it = 0
    while True:
        _repair_empty(points, labels, centroids, k)
        centroids = _update(points, labels, k)
        trace.append(_inertia(points, labels, centroids))
        it += 1
        if it >= MAX_ITER:
            break
        new = np.argmin(_sq_dists(points, centroids), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
    return labels, centroids, trace, it


def _hartigan(points: np.ndarray, labels: np.ndarray, k: int, trace: list[float]) -> np.ndarray:
    """Single-point moves that strictly lower inertia, best move first.

    Moving x from A to B changes inertia by
    ``|B|/(|B|+1) d(x,cB) - |A|/(|A|-1) d(x,cA)``; a Lloyd fixed point can
    still admit such moves, a Hartigan fixed point is also a Lloyd one.
    """
    labels = labels.copy()
    m = points.shape[0]
    rows = np.arange(m)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    cents = _update(points, labels, k)
    for _ in range(MAX_ITER * m):
        d2 = _sq_dists(points, cents)
        own = d2[rows, labels]
        n_own = counts[labels]
        remove = np.zeros(m)
        movable = n_own > 1
        remove[movable] = n_own[movable] / (n_own[movable] - 1) * own[movable]
        delta = counts / (counts + 1) * d2 - remove[:, None]
        delta[rows, labels] = np.inf
        delta[~movable] = np.inf
        i, c = np.unravel_index(np.argmin(delta), delta.shape)
        if not delta[i, c] < -1e-12 * max(1.0, trace[-1]):
            break
        a = labels[i]
        cents[a] = (cents[a] * counts[a] - points[i]) / (counts[a] - 1)
        cents[c] = (cents[c] * counts[c] + points[i]) / (counts[c] + 1)
        counts[a] -= 1
        counts[c] += 1
        labels[i] = c
    return labels


def kmeans(points: np.ndarray, k: int, seed: int = 0, n_init: int = N_INIT) -> ClusterAssignment:
    """Lloyd's algorithm with k-means++ seeding, best of ``n_init`` restarts.

    Each restart is polished with Hartigan single-point moves. Rows of
    ``points`` are the items being clustered; ties in assignment go to the
    lowest centroid index.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DimensionMismatch("points must be a 2-D array")
    m = points.shape[0]
    if not 1 <= k:
        raise DataError("k must be positive")
    if k > m:
        raise KTooLarge(f"k={k} exceeds the number of points {m}")
    if not np.all(np.isfinite(points)):
        raise NonFinite("points contain NaN or Inf")
    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        labels, cents, trace, it = _lloyd(points, k, np.random.default_rng(child))
        refined = _hartigan(points, labels, k, trace)
        if not np.array_equal(refined, labels):
            labels = refined
            cents = _update(points, labels, k)
            trace = trace + [_inertia(points, labels, cents)]
            it += 1
        if best is None or trace[-1] < best[2][-1]:
            best = (labels, cents, trace, it)
    labels, cents, trace, it = best
    return ClusterAssignment(k, labels, cents, trace[-1], it, seed, trace)


def mad(row: np.ndarray) -> float:
    """Mean absolute deviation of a feature row from its own mean."""
    row = np.asarray(row, dtype=np.float64)
    return float(np.mean(np.abs(row - row.mean())))


def mad_scores(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return np.mean(np.abs(values - values.mean(axis=1, keepdims=True)), axis=1)


@dataclass(frozen=True)
class ReducedFeatureIndexSet:
    writer_id: str
    indices: tuple[int, ...]
    catalogue_id: str
    source_seed: int

    def __post_init__(self):
        idx = list(self.indices)
        if idx != sorted(set(idx)) or (idx and idx[0] < 0):
            raise DataError("indices must be unique, non-negative and ascending")

    @property
    def k(self) -> int:
        return len(self.indices)

    def to_text(self, echo: dict | None = None) -> str:
        """Header line, one index per line, then optional trailing ``# key=value`` echo lines."""
        head = f"#FS writer={self.writer_id} k={self.k} seed={self.source_seed} catalogue={self.catalogue_id}"
        notes = [f"# {k}={v}" for k, v in (echo or {}).items()]
        return "\n".join([head, *map(str, self.indices), *notes]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ReducedFeatureIndexSet":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#FS "):
            raise DataError("missing #FS header")
        hdr = dict(tok.split("=", 1) for tok in lines[0].split()[1:] if "=" in tok)
        try:
            hdr = {k: hdr[k] for k in ("writer", "k", "seed", "catalogue")}
            indices = tuple(int(ln) for ln in lines[1:] if ln.strip() and not ln.startswith("#"))
            int(hdr["k"]), int(hdr["seed"])
        except (KeyError, ValueError) as e:
            raise DataError(f"malformed index set: {e}") from None
        if len(indices) != int(hdr["k"]):
            raise DataError(f"header k={hdr['k']} but {len(indices)} indices")
        return cls(hdr["writer"], indices, hdr["catalogue"], int(hdr["seed"]))


def select_representatives(matrix: FeatureSignatureMatrix, assignment: ClusterAssignment) -> ReducedFeatureIndexSet:
    if assignment.labels.shape[0] != matrix.m:
        raise DimensionMismatch(f"{assignment.labels.shape[0]} labels for {matrix.m} features")
    scores = mad_scores(matrix.values)
    chosen = []
    for c in range(assignment.k):
        members = np.flatnonzero(assignment.labels == c)
        if members.size == 0:
            raise DataError(f"cluster {c} is empty")
        # argmax returns the first maximum, i.e. the lowest feature index
        chosen.append(int(members[np.argmax(scores[members])]))
    return ReducedFeatureIndexSet(matrix.writer_id, tuple(sorted(chosen)), matrix.catalogue_id,
                                  assignment.seed)


def _reduced_id(index_set: ReducedFeatureIndexSet) -> str:
    h = hashlib.sha256(f"{index_set.catalogue_id}:{index_set.indices}".encode()).hexdigest()[:8]
    return f"{index_set.catalogue_id}/fs{index_set.k}-{h}"


def reduce_features(vector: FeatureVector, index_set: ReducedFeatureIndexSet) -> FeatureVector:
    if vector.catalogue_id != index_set.catalogue_id:
        raise CatalogueMismatch(f"vector catalogue {vector.catalogue_id} != index set {index_set.catalogue_id}")
    idx = np.asarray(index_set.indices, dtype=int)
    if idx.size and idx[-1] >= vector.values.size:
        raise IndexOutOfRange(f"index {idx[-1]} >= vector length {vector.values.size}")
    return FeatureVector(vector.values[idx].copy(), _reduced_id(index_set))


@dataclass(frozen=True, eq=False)
class WriterReduction:
    """A fitted reduce-and-normalise transform for one writer."""

    index_set: ReducedFeatureIndexSet
    normalization: Normalization
    assignment: ClusterAssignment

    def transform(self, raw: np.ndarray) -> np.ndarray:
        """Map raw catalogue vectors (rows) to reduced, z-scored model inputs."""
        raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
        return self.normalization.apply(raw[:, list(self.index_set.indices)])


def fit_writer_reduction(matrix: FeatureSignatureMatrix, k: int, seed: int) -> WriterReduction:
    """z-score, cluster the feature rows, keep max-MAD representatives."""
    normed = zscore_normalize(matrix)
    assignment = kmeans(normed.values, k, seed)
    index_set = select_representatives(normed, assignment)
    return WriterReduction(index_set, normed.normalization.subset(index_set.indices), assignment)
