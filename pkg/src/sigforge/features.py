"""Kinematic channels, global feature catalogues and the per-writer FS matrix.

The built-in catalogues are fixed and documented here, since no reference
set of global features exists for the method:

catalogue 47
    For the channels x, y (offsets from the first point), pressure (pen-down
    points only), vx, vy, speed, accel, path_angle: mean, std, min, max,
    range (40 entries); then duration_ms, point_count, path_length, width,
    height, aspect_ratio, pen_up_ratio.
catalogue 100
    Catalogue 47 followed by the quantiles q10, q25, q50, q75, q90 of the
    same eight channels (40 entries) and 13 scalars: corr_x_y, corr_vx_vy,
    corr_pressure_speed, start_x_norm, start_y_norm, end_x_norm, end_y_norm,
    vx_zero_crossings, vy_zero_crossings, curvature_mean, curvature_std,
    jerk_rms, t_max_speed_norm.

Standard deviations use the population (divide-by-n) convention throughout.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import CatalogueMismatch, DataError, EmptyInput, TooShort
from .signals import SignatureSample

CHANNELS = ("x", "y", "pressure", "vx", "vy", "speed", "accel", "path_angle")
STATS = ("mean", "std", "min", "max", "range")
QUANTILES = (10, 25, 50, 75, 90)
SCALARS_47 = ("duration_ms", "point_count", "path_length", "width", "height",
              "aspect_ratio", "pen_up_ratio")
SCALARS_100 = ("corr_x_y", "corr_vx_vy", "corr_pressure_speed", "start_x_norm",
               "start_y_norm", "end_x_norm", "end_y_norm", "vx_zero_crossings",
               "vy_zero_crossings", "curvature_mean", "curvature_std", "jerk_rms",
               "t_max_speed_norm")

_MIN_DT_S = 1e-3


@dataclass(frozen=True)
class ChannelSet:
    """Per-point series derived from one sample.

    ``x``, ``y``, ``pressure`` have the sample length L. Segment series
    (``vx``, ``vy``, ``speed``, ``path_angle``, ``d_pressure``) have L-1
    entries; ``accel`` and ``curvature`` are second-difference series of
    L-2 entries stored front-padded with a zero to L-1.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    pressure: np.ndarray
    pen_down: np.ndarray
    dt: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    speed: np.ndarray
    path_angle: np.ndarray
    accel: np.ndarray
    d_pressure: np.ndarray
    curvature: np.ndarray
    segment_length: np.ndarray


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    a = np.arctan2(np.sin(a), np.cos(a))
    return np.where(a <= -np.pi, np.pi, a)


def derive_channels(sample: SignatureSample) -> ChannelSet:
    if len(sample.points) < 3:
        raise TooShort(f"need at least 3 points, got {len(sample.points)}")
    a = sample.arrays()
    x, y, t, p = a["x"], a["y"], a["t"], a["pressure"]
    dt = np.diff(t) / 1000.0
    dt = np.where(dt <= 0, _MIN_DT_S, dt)
    dx, dy = np.diff(x), np.diff(y)
    vx, vy = dx / dt, dy / dt
    speed = np.sqrt(vx * vx + vy * vy)
    angle = np.arctan2(dy, dx)
    angle = np.where(angle <= -np.pi, np.pi, angle)
    seg = np.sqrt(dx * dx + dy * dy)

    accel = np.zeros_like(speed)
    dt_mid = 0.5 * (dt[:-1] + dt[1:])
    accel[1:] = np.diff(speed) / dt_mid

    curvature = np.zeros_like(speed)
    turn = _wrap_angle(np.diff(angle))
    ds = 0.5 * (seg[:-1] + seg[1:])
    with np.errstate(divide="ignore", invalid="ignore"):
        curvature[1:] = np.where(ds > 0, turn / ds, 0.0)

    return ChannelSet(x=x, y=y, t=t, pressure=p, pen_down=a["pen_down"], dt=dt,
                      vx=vx, vy=vy, speed=speed, path_angle=angle, accel=accel,
                      d_pressure=np.diff(p) / dt, curvature=curvature, segment_length=seg)


def _channel_values(ch: ChannelSet, name: str) -> np.ndarray:
    if name == "x":
        return ch.x - ch.x[0]
    if name == "y":
        return ch.y - ch.y[0]
    if name == "pressure":
        return ch.pressure[ch.pen_down]
    if name == "accel":
        return ch.accel[1:]
    return getattr(ch, name)


def _stat(v: np.ndarray, kind: str) -> float:
    if v.size == 0:
        return 0.0
    if kind == "mean":
        return float(np.mean(v))
    if kind == "std":
        return float(np.std(v))
    if kind == "min":
        return float(np.min(v))
    if kind == "max":
        return float(np.max(v))
    if kind == "range":
        return float(np.max(v) - np.min(v))
    raise KeyError(kind)


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    sa, sb = np.sqrt(np.mean(a * a)), np.sqrt(np.mean(b * b))
    if sa < 1e-12 or sb < 1e-12:
        return 0.0
    return float(np.mean(a * b) / (sa * sb))


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def _zero_crossings(v: np.ndarray) -> float:
    return float(np.count_nonzero(v[:-1] * v[1:] < 0))


def _scalar(ch: ChannelSet, name: str) -> float:
    L = ch.x.size
    width = float(ch.x.max() - ch.x.min())
    height = float(ch.y.max() - ch.y.min())
    if name == "duration_ms":
        return float(ch.t[-1] - ch.t[0])
    if name == "point_count":
        return float(L)
    if name == "path_length":
        return float(np.sum(ch.segment_length))
    if name == "width":
        return width
    if name == "height":
        return height
    if name == "aspect_ratio":
        return _ratio(width, height)
    if name == "pen_up_ratio":
        return float(np.count_nonzero(~ch.pen_down)) / L
    if name == "corr_x_y":
        return _corr(ch.x, ch.y)
    if name == "corr_vx_vy":
        return _corr(ch.vx, ch.vy)
    if name == "corr_pressure_speed":
        return _corr(ch.pressure[1:], ch.speed)
    if name == "start_x_norm":
        return _ratio(float(ch.x[0] - ch.x.min()), width)
    if name == "start_y_norm":
        return _ratio(float(ch.y[0] - ch.y.min()), height)
    if name == "end_x_norm":
        return _ratio(float(ch.x[-1] - ch.x.min()), width)
    if name == "end_y_norm":
        return _ratio(float(ch.y[-1] - ch.y.min()), height)
    if name == "vx_zero_crossings":
        return _zero_crossings(ch.vx)
    if name == "vy_zero_crossings":
        return _zero_crossings(ch.vy)
    if name == "curvature_mean":
        return float(np.mean(ch.curvature[1:]))
    if name == "curvature_std":
        return float(np.std(ch.curvature[1:]))
    if name == "jerk_rms":
        acc = ch.accel[1:]
        if acc.size < 2:
            return 0.0
        jerk = np.diff(acc) / ch.dt[2:]
        return float(np.sqrt(np.mean(jerk * jerk)))
    if name == "t_max_speed_norm":
        i = int(np.argmax(ch.speed))
        t_mid = 0.5 * (ch.t[i] + ch.t[i + 1]) - ch.t[0]
        return _ratio(float(t_mid), float(ch.t[-1] - ch.t[0]))
    raise KeyError(name)


# --- catalogues ----------------------------------------------------------------

@dataclass(frozen=True)
class FeatureCatalogue:
    """Ordered ``(name, definition_id)`` entries.

    Definition ids are ``stat:<kind>:<channel>``, ``quantile:<q>:<channel>``
    or ``scalar:<name>``.
    """

    entries: tuple[tuple[str, str], ...]

    def __post_init__(self):
        names = [n for n, _ in self.entries]
        if len(set(names)) != len(names):
            raise DataError("catalogue names must be unique")
        if not names:
            raise EmptyInput("catalogue is empty")

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.entries]

    @property
    def catalogue_id(self) -> str:
        h = hashlib.sha256()
        for name, defn in self.entries:
            h.update(f"{name}\t{defn}\n".encode())
        return h.hexdigest()[:16]

    def truncated(self, size: int) -> "FeatureCatalogue":
        return FeatureCatalogue(self.entries[:size])

    def manifest(self) -> str:
        lines = [f"{i}\t{n}\t{d}" for i, (n, d) in enumerate(self.entries)]
        lines.append(f"#catalogue {self.catalogue_id}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_manifest(cls, text: str) -> "FeatureCatalogue":
        entries = []
        declared = None
        for line in text.splitlines():
            if line.startswith("#catalogue "):
                declared = line.split()[1]
                continue
            if not line.strip():
                continue
            idx, name, defn = line.split("\t")
            if int(idx) != len(entries):
                raise DataError(f"manifest index {idx} out of order")
            entries.append((name, defn))
        cat = cls(tuple(entries))
        if declared is not None and declared != cat.catalogue_id:
            raise CatalogueMismatch(f"manifest hash {declared} != computed {cat.catalogue_id}")
        return cat


def _entries_47() -> list[tuple[str, str]]:
    out = [(f"{c}_{s}", f"stat:{s}:{c}") for c in CHANNELS for s in STATS]
    out += [(s, f"scalar:{s}") for s in SCALARS_47]
    return out


def _entries_100() -> list[tuple[str, str]]:
    out = _entries_47()
    out += [(f"{c}_q{q}", f"quantile:{q}:{c}") for c in CHANNELS for q in QUANTILES]
    out += [(s, f"scalar:{s}") for s in SCALARS_100]
    return out


def catalogue(size: int) -> FeatureCatalogue:
    """Built-in catalogue of 47 or 100 features (other sizes truncate the 100 one)."""
    if size == 47:
        return FeatureCatalogue(tuple(_entries_47()))
    full = FeatureCatalogue(tuple(_entries_100()))
    if size == 100:
        return full
    if not 2 <= size <= 100:
        raise DataError(f"catalogue size {size} outside 2..100")
    return full.truncated(size)


# --- extraction --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    catalogue_id: str

    def __len__(self):
        return self.values.size


def _evaluate(ch: ChannelSet, defn: str, cache: dict[str, np.ndarray]) -> float:
    kind, _, rest = defn.partition(":")
    if kind == "scalar":
        return _scalar(ch, rest)
    arg, _, chan = rest.partition(":")
    if chan not in cache:
        cache[chan] = _channel_values(ch, chan)
    v = cache[chan]
    if kind == "stat":
        return _stat(v, arg)
    if kind == "quantile":
        return float(np.percentile(v, int(arg))) if v.size else 0.0
    raise KeyError(defn)


def extract_features(sample: SignatureSample, cat: FeatureCatalogue) -> FeatureVector:
    ch = derive_channels(sample)
    cache: dict[str, np.ndarray] = {}
    values = np.array([_evaluate(ch, d, cache) for _, d in cat.entries], dtype=np.float64)
    return FeatureVector(values, cat.catalogue_id)


# --- FS matrix ---------------------------------------------------------------

_STD_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class Normalization:
    """Per-feature ``(mean, std)``; features with std below 1e-12 are only centred."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        divisor = np.where(self.std < _STD_FLOOR, 1.0, self.std)
        out = (values - self.mean) / divisor
        return out

    def subset(self, indices: Sequence[int]) -> "Normalization":
        idx = np.asarray(indices, dtype=int)
        return Normalization(self.mean[idx], self.std[idx])

    @classmethod
    def identity(cls, m: int) -> "Normalization":
        return cls(np.zeros(m), np.ones(m))


@dataclass(frozen=True, eq=False)
class FeatureSignatureMatrix:
    """m x n matrix: row k is feature k across the writer's n signatures."""

    writer_id: str
    values: np.ndarray
    catalogue_id: str
    row_means: np.ndarray = field(default=None)  # type: ignore[assignment]
    normalization: Normalization | None = None

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] < 2 or self.values.shape[1] < 1:
            raise DataError(f"FS matrix needs m >= 2, n >= 1; got shape {self.values.shape}")
        if self.row_means is None:
            object.__setattr__(self, "row_means", self.values.mean(axis=1))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def transform(self, vectors: np.ndarray) -> np.ndarray:
        """Apply the recorded normalisation to raw feature vectors (rows)."""
        if self.normalization is None:
            return np.asarray(vectors, dtype=np.float64)
        return self.normalization.apply(np.asarray(vectors, dtype=np.float64))


def build_fs_matrix(samples: Sequence[FeatureVector], writer_id: str = "") -> FeatureSignatureMatrix:
    if not samples:
        raise EmptyInput("no feature vectors")
    ids = {v.catalogue_id for v in samples}
    if len(ids) != 1:
        raise CatalogueMismatch(f"vectors from {len(ids)} different catalogues")
    values = np.column_stack([v.values for v in samples])
    return FeatureSignatureMatrix(writer_id or "-", values, samples[0].catalogue_id)


def zscore_normalize(matrix: FeatureSignatureMatrix) -> FeatureSignatureMatrix:
    """Z-score each row; zero-variance rows become 0 and are never divided."""
    mean = matrix.values.mean(axis=1)
    std = matrix.values.std(axis=1)
    norm = Normalization(mean, std)
    normed = norm.apply(matrix.values.T).T
    return replace(matrix, values=normed, row_means=normed.mean(axis=1), normalization=norm)
