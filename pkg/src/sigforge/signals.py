"""Pen-trajectory samples: data types, file formats and a synthetic generator.

Two on-disk formats are supported:

* the SVC-2004 task-2 text layout (point count, then ``X Y T BtnStatus Az Alt
  Pressure`` rows), read with :func:`parse_svc`;
* a line-oriented canonical format with a ``#SIG`` metadata header, read and
  written with :func:`parse_canonical` / :func:`write_canonical`.

No preprocessing of raw trajectories (filtering, unit normalisation) is
applied anywhere; values are kept in device units as captured.
"""

from __future__ import annotations

import enum
import os
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    BadValue,
    CountMismatch,
    EmptyBody,
    InvalidSample,
    MalformedHeader,
    MissingHeader,
    RowArity,
    SignatureFormatError,
    UnknownLabel,
)

_INT_RE = re.compile(r"-?[0-9]{1,19}")
_COUNT_RE = re.compile(r"[0-9]{1,12}")
_RATE_RE = re.compile(r"[0-9]{1,12}(/[0-9]{1,12})?")
_COORD_LIMIT = 2**31
_TIME_LIMIT = 2**53
_ID_RE = re.compile(r"[^\s=]+")


class Label(enum.Enum):
    GENUINE = "genuine"
    SKILLED = "skilled"


class Provenance(enum.Enum):
    SVC2004 = "svc2004"
    CANONICAL = "canonical"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True, slots=True)
class SignaturePoint:
    x: int
    y: int
    t: int
    pressure: int
    azimuth: int | None
    altitude: int | None
    pen_down: bool

    def check(self) -> None:
        for name in ("x", "y"):
            v = getattr(self, name)
            if not -_COORD_LIMIT < v < _COORD_LIMIT:
                raise InvalidSample(f"{name}={v} out of range")
        if not 0 <= self.t < _TIME_LIMIT:
            raise InvalidSample(f"t={self.t} out of range")
        if not 0 <= self.pressure < _COORD_LIMIT:
            raise InvalidSample(f"pressure={self.pressure} must be non-negative")
        if self.azimuth is not None and not 0 <= self.azimuth < 3600:
            raise InvalidSample(f"azimuth={self.azimuth} outside [0, 3600)")
        if self.altitude is not None and not 0 <= self.altitude <= 900:
            raise InvalidSample(f"altitude={self.altitude} outside [0, 900]")


@dataclass(frozen=True)
class SignatureSample:
    """One captured signature: an ordered point stream plus metadata."""

    writer_id: str
    sample_id: str
    label: Label
    points: tuple[SignaturePoint, ...]
    sample_rate_hz: Fraction | None = None

    def __post_init__(self):
        for name in ("writer_id", "sample_id"):
            if not _ID_RE.fullmatch(getattr(self, name)):
                raise InvalidSample(f"{name} must be non-empty without whitespace or '='")
        if not isinstance(self.label, Label):
            raise InvalidSample(f"bad label {self.label!r}")
        if not isinstance(self.points, tuple):
            object.__setattr__(self, "points", tuple(self.points))
        if len(self.points) < 2:
            raise InvalidSample("a sample needs at least 2 points")
        prev_t = -1
        for p in self.points:
            p.check()
            if p.t < prev_t:
                raise InvalidSample("timestamps must be non-decreasing")
            prev_t = p.t
        if self.sample_rate_hz is not None and self.sample_rate_hz <= 0:
            raise InvalidSample("sample rate must be positive")

    def __len__(self):
        return len(self.points)

    def arrays(self) -> dict[str, np.ndarray]:
        """Column arrays; absent pen angles become NaN."""
        pts = self.points
        return {
            "x": np.array([p.x for p in pts], dtype=np.float64),
            "y": np.array([p.y for p in pts], dtype=np.float64),
            "t": np.array([p.t for p in pts], dtype=np.float64),
            "pressure": np.array([p.pressure for p in pts], dtype=np.float64),
            "azimuth": np.array([np.nan if p.azimuth is None else p.azimuth for p in pts]),
            "altitude": np.array([np.nan if p.altitude is None else p.altitude for p in pts]),
            "pen_down": np.array([p.pen_down for p in pts], dtype=bool),
        }


@dataclass
class WriterRecord:
    genuine: list[SignatureSample] = field(default_factory=list)
    skilled_forgeries: list[SignatureSample] = field(default_factory=list)

    def samples(self) -> list[SignatureSample]:
        return self.genuine + self.skilled_forgeries


@dataclass
class Dataset:
    writers: dict[str, WriterRecord]
    provenance: Provenance = Provenance.CANONICAL

    def validate(self) -> None:
        for wid, rec in self.writers.items():
            if not rec.genuine:
                raise InvalidSample(f"writer {wid} has no genuine samples")
            seen = set()
            for s in rec.samples():
                if s.writer_id != wid:
                    raise InvalidSample(f"sample {s.sample_id} carries writer {s.writer_id}, filed under {wid}")
                if s.sample_id in seen:
                    raise InvalidSample(f"duplicate sample id {s.sample_id} for writer {wid}")
                seen.add(s.sample_id)
            if any(s.label is not Label.GENUINE for s in rec.genuine):
                raise InvalidSample(f"non-genuine sample in genuine list of {wid}")
            if any(s.label is not Label.SKILLED for s in rec.skilled_forgeries):
                raise InvalidSample(f"non-skilled sample in forgery list of {wid}")

    @classmethod
    def from_samples(cls, samples: Iterable[SignatureSample],
                     provenance: Provenance = Provenance.CANONICAL) -> "Dataset":
        writers: dict[str, WriterRecord] = {}
        for s in samples:
            rec = writers.setdefault(s.writer_id, WriterRecord())
            (rec.genuine if s.label is Label.GENUINE else rec.skilled_forgeries).append(s)
        for rec in writers.values():
            rec.genuine.sort(key=lambda s: s.sample_id)
            rec.skilled_forgeries.sort(key=lambda s: s.sample_id)
        ds = cls(dict(sorted(writers.items())), provenance)
        ds.validate()
        return ds

    def writer_ids(self) -> list[str]:
        return list(self.writers)

    def get(self, writer_id: str, sample_id: str) -> SignatureSample:
        for s in self.writers[writer_id].samples():
            if s.sample_id == sample_id:
                return s
        raise KeyError((writer_id, sample_id))


# --- SVC-2004 ----------------------------------------------------------------

def _decode_lines(data: bytes | str) -> list[str]:
    if isinstance(data, str):
        text = data
        if not text.isascii():
            raise BadValue("input is not ASCII")
    else:
        try:
            text = bytes(data).decode("ascii")
        except UnicodeDecodeError as e:
            raise BadValue(f"input is not ASCII: {e}") from None
    return text.splitlines()


def _int(tok: str, what: str) -> int:
    if not _INT_RE.fullmatch(tok):
        raise BadValue(f"{what}: expected integer, got {tok[:20]!r}")
    return int(tok)


def _rebase_times(ts: list[int]) -> list[int]:
    """Shift to start at 0 and force strict increase (cumulative max + 1 ms)."""
    out = []
    prev = None
    for t in ts:
        t = t - ts[0]
        if prev is not None and t <= prev:
            t = prev + 1
        out.append(t)
        prev = t
    return out


def parse_svc(data: bytes | str, writer_id: str, sample_id: str, label: Label,
              sample_rate_hz: Fraction | None = None) -> SignatureSample:
    """Parse one SVC-2004 task-2 file.

    Metadata comes from the caller (see :func:`svc_metadata_from_filename`).
    Clock glitches (non-increasing ``T``) are repaired, not rejected.
    """
    lines = [ln for ln in _decode_lines(data) if ln.strip()]
    if not lines:
        raise MalformedHeader("empty file")
    head = lines[0].split()
    if len(head) != 1 or not _COUNT_RE.fullmatch(head[0]):
        raise MalformedHeader(f"bad point-count line {lines[0][:40]!r}")
    count = int(head[0])
    rows = lines[1:]
    if len(rows) != count:
        raise CountMismatch(f"header declares {count} rows, found {len(rows)}")
    if count < 2:
        raise EmptyBody("need at least 2 points")
    raw = []
    for i, ln in enumerate(rows):
        toks = ln.split()
        if len(toks) != 7:
            raise RowArity(f"row {i + 1}: expected 7 columns, got {len(toks)}")
        raw.append([_int(tok, f"row {i + 1}") for tok in toks])
    ts = _rebase_times([r[2] for r in raw])
    try:
        pts = tuple(
            SignaturePoint(x=r[0], y=r[1], t=t, pressure=r[6], azimuth=r[4],
                           altitude=r[5], pen_down=r[3] == 1)
            for r, t in zip(raw, ts)
        )
        return SignatureSample(writer_id, sample_id, label, pts, sample_rate_hz)
    except InvalidSample as e:
        raise BadValue(str(e)) from None


def write_svc(sample: SignatureSample) -> bytes:
    """Emit SVC-2004 layout. Absent pen angles are written as 0."""
    out = [str(len(sample.points))]
    for p in sample.points:
        out.append(" ".join(str(v) for v in (
            p.x, p.y, p.t, int(p.pen_down), p.azimuth or 0, p.altitude or 0, p.pressure)))
    return ("\n".join(out) + "\n").encode("ascii")


_SVC_NAME = re.compile(r"U(\d+)S(\d+)\.TXT", re.IGNORECASE)


def svc_metadata_from_filename(name: str) -> tuple[str, str, Label]:
    """``U<writer>S<sample>.TXT``: samples 1-20 genuine, 21-40 skilled."""
    m = _SVC_NAME.fullmatch(os.path.basename(name))
    if not m:
        raise MalformedHeader(f"not an SVC file name: {name!r}")
    s = int(m.group(2))
    if not 1 <= s <= 40:
        raise MalformedHeader(f"SVC sample number {s} outside 1..40")
    label = Label.GENUINE if s <= 20 else Label.SKILLED
    return f"U{int(m.group(1))}", f"S{s:02d}", label


# --- canonical format --------------------------------------------------------

def _fmt_opt(v: int | None) -> str:
    return "-" if v is None else str(v)


def write_canonical(sample: SignatureSample) -> bytes:
    rate = "-" if sample.sample_rate_hz is None else str(sample.sample_rate_hz)
    lines = [f"#SIG writer={sample.writer_id} sample={sample.sample_id} "
             f"label={sample.label.value} rate={rate}"]
    for p in sample.points:
        lines.append(f"{p.x} {p.y} {p.t} {p.pressure} {_fmt_opt(p.azimuth)} "
                     f"{_fmt_opt(p.altitude)} {int(p.pen_down)}")
    return ("\n".join(lines) + "\n").encode("utf-8")


_HEADER_KEYS = ("writer", "sample", "label", "rate")


def _parse_header(line: str) -> dict[str, str]:
    toks = line.split(" ")
    if not toks or toks[0] != "#SIG":
        raise MissingHeader("first line must start with '#SIG'")
    fields: dict[str, str] = {}
    for tok in toks[1:]:
        if not tok:
            continue
        key, sep, value = tok.partition("=")
        if not sep or key not in _HEADER_KEYS or key in fields or not value:
            raise MissingHeader(f"bad header field {tok[:40]!r}")
        fields[key] = value
    missing = [k for k in _HEADER_KEYS if k not in fields]
    if missing:
        raise MissingHeader(f"header lacks {', '.join(missing)}")
    return fields


def parse_canonical(data: bytes | str) -> SignatureSample:
    if isinstance(data, str):
        data = data.encode("utf-8", "surrogatepass")
    try:
        text = bytes(data).decode("utf-8")
    except UnicodeDecodeError as e:
        raise BadValue(f"input is not UTF-8: {e}") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MissingHeader("empty input")
    hdr = _parse_header(lines[0])
    try:
        label = Label(hdr["label"])
    except ValueError:
        raise UnknownLabel(f"label must be genuine or skilled, got {hdr['label'][:20]!r}") from None
    rate = None
    if hdr["rate"] != "-":
        if not _RATE_RE.fullmatch(hdr["rate"]):
            raise BadValue(f"bad rate {hdr['rate'][:20]!r}")
        try:
            rate = Fraction(hdr["rate"])
        except ZeroDivisionError:
            raise BadValue("rate denominator is zero") from None
    body = lines[1:]
    if len(body) < 2:
        raise EmptyBody(f"need at least 2 point rows, found {len(body)}")
    pts = []
    for i, ln in enumerate(body):
        toks = ln.split(" ")
        if len(toks) != 7:
            raise RowArity(f"row {i + 1}: expected 7 columns, got {len(toks)}")
        where = f"row {i + 1}"
        x, y, t, pr = (_int(tok, where) for tok in toks[:4])
        az = None if toks[4] == "-" else _int(toks[4], where)
        alt = None if toks[5] == "-" else _int(toks[5], where)
        if toks[6] not in ("0", "1"):
            raise BadValue(f"{where}: pen_down must be 0 or 1")
        pts.append(SignaturePoint(x, y, t, pr, az, alt, toks[6] == "1"))
    try:
        return SignatureSample(hdr["writer"], hdr["sample"], label, tuple(pts), rate)
    except InvalidSample as e:
        raise BadValue(str(e)) from None


# --- dataset directories -----------------------------------------------------

MANIFEST_NAME = "MANIFEST"


def save_dataset(dataset: Dataset, root: str | os.PathLike, echo: dict[str, object] | None = None) -> None:
    """Write ``root/<writer>/<sample>.sig`` files plus a ``MANIFEST``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = [f"provenance={dataset.provenance.value}"]
    for k, v in (echo or {}).items():
        manifest.append(f"{k}={v}")
    for wid, rec in dataset.writers.items():
        wdir = root / wid
        wdir.mkdir(exist_ok=True)
        for s in rec.samples():
            (wdir / f"{s.sample_id}.sig").write_bytes(write_canonical(s))
            manifest.append(f"file={wid}/{s.sample_id}.sig")
    (root / MANIFEST_NAME).write_text("\n".join(manifest) + "\n")


def load_dataset(root: str | os.PathLike) -> Dataset:
    root = Path(root)
    provenance = Provenance.CANONICAL
    mpath = root / MANIFEST_NAME
    if mpath.exists():
        for line in mpath.read_text().splitlines():
            if line.startswith("provenance="):
                provenance = Provenance(line.split("=", 1)[1])
    samples = [parse_canonical(p.read_bytes()) for p in sorted(root.glob("*/*.sig"))]
    if not samples:
        raise InvalidSample(f"no .sig files under {root}")
    return Dataset.from_samples(samples, provenance)


def load_svc_dir(root: str | os.PathLike) -> Dataset:
    samples = []
    for p in sorted(Path(root).iterdir()):
        if not _SVC_NAME.fullmatch(p.name):
            continue
        wid, sid, label = svc_metadata_from_filename(p.name)
        samples.append(parse_svc(p.read_bytes(), wid, sid, label))
    if not samples:
        raise InvalidSample(f"no U*S*.TXT files under {root}")
    return Dataset.from_samples(samples, Provenance.SVC2004)


# --- synthetic generator -----------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    num_writers: int = 20
    genuine_per_writer: int = 25
    skilled_per_writer: int = 25
    points_per_signature: int = 128
    writer_separation: float = 1.0
    intra_noise: float = 0.02
    forgery_noise: float = 0.15
    seed: int = 0
    # opt-in escape from the strict noise ordering, for the
    # indistinguishable-classes control run only
    chance_control: bool = False

    def __post_init__(self):
        for name in ("num_writers", "genuine_per_writer", "skilled_per_writer"):
            if getattr(self, name) < 1:
                raise InvalidSample(f"{name} must be positive")
        if self.points_per_signature < 32:
            raise InvalidSample("points_per_signature must be >= 32")
        if self.writer_separation <= 0:
            raise InvalidSample("writer_separation must be positive")
        if self.intra_noise < 0:
            raise InvalidSample("intra_noise must be non-negative")
        if self.chance_control:
            if self.forgery_noise != self.intra_noise:
                raise InvalidSample("chance_control requires forgery_noise == intra_noise")
        elif not self.forgery_noise > self.intra_noise:
            raise InvalidSample("forgery_noise must exceed intra_noise")
        if not 0 <= self.seed < 2**64:
            raise InvalidSample("seed must be a 64-bit unsigned integer")


# latent layout: x harmonics (amp, freq, phase) x3, y likewise, x drift,
# pressure (level, amp, freq, phase), pen tilt (azimuth, altitude)
_N_HARM = 3
_LATENT_DIM = 6 * _N_HARM + 1 + 4 + 2
_X_AMP = np.array([900.0, 450.0, 225.0])
_Y_AMP = np.array([600.0, 300.0, 150.0])
_DT_MS = 10


def _render(theta: np.ndarray, n_points: int, writer_id: str, sample_id: str, label: Label) -> SignatureSample:
    tau = np.linspace(0.0, 1.0, n_points)
    h = np.arange(1, _N_HARM + 1)

    def axis(offset: int, base_amp: np.ndarray) -> np.ndarray:
        amp = base_amp * np.exp(0.3 * theta[offset:offset + 3])
        freq = h * np.exp(0.2 * theta[offset + 3:offset + 6])
        phase = theta[offset + 6:offset + 9]
        return (amp[:, None] * np.sin(2 * np.pi * freq[:, None] * tau + phase[:, None])).sum(axis=0)

    x = 4000.0 + axis(0, _X_AMP) + 3000.0 * np.exp(0.2 * theta[18]) * tau
    y = 3000.0 + axis(9, _Y_AMP)
    lvl, pamp, pfreq, pph = theta[19:23]
    pressure = (600.0 + 250.0 * np.tanh(lvl)
                + 450.0 * np.exp(0.3 * pamp) * np.sin(2 * np.pi * 2.0 * np.exp(0.2 * pfreq) * tau + pph))
    pressure = np.clip(np.rint(pressure), 0, 1023).astype(int)
    az = np.rint(1800 + 900 * np.tanh(theta[23]) + 100 * np.sin(2 * np.pi * tau)).astype(int) % 3600
    alt = np.clip(np.rint(450 + 300 * np.tanh(theta[24]) + 50 * np.cos(2 * np.pi * tau)), 0, 900).astype(int)
    xi = np.rint(x).astype(int)
    yi = np.rint(y).astype(int)
    pts = tuple(
        SignaturePoint(int(xi[i]), int(yi[i]), i * _DT_MS, int(pressure[i]), int(az[i]), int(alt[i]),
                       bool(pressure[i] > 0))
        for i in range(n_points)
    )
    return SignatureSample(writer_id, sample_id, label, pts, Fraction(1000, _DT_MS))


def generate_synthetic_dataset(config: SynthConfig) -> Dataset:
    """Seeded sum-of-sinusoids writers.

    Each writer draws a latent vector with spread ``writer_separation``;
    genuine repetitions add ``intra_noise`` to it and skilled forgeries add
    ``forgery_noise``.
    """
    root = np.random.SeedSequence(config.seed)
    writers: dict[str, WriterRecord] = {}
    for w, child in enumerate(root.spawn(config.num_writers)):
        rng = np.random.default_rng(child)
        wid = f"w{w + 1:03d}"
        latent = config.writer_separation * rng.standard_normal(_LATENT_DIM)
        rec = WriterRecord()
        for i in range(config.genuine_per_writer):
            theta = latent + config.intra_noise * rng.standard_normal(_LATENT_DIM)
            rec.genuine.append(_render(theta, config.points_per_signature, wid, f"g{i + 1:02d}", Label.GENUINE))
        for i in range(config.skilled_per_writer):
            theta = latent + config.forgery_noise * rng.standard_normal(_LATENT_DIM)
            rec.skilled_forgeries.append(_render(theta, config.points_per_signature, wid, f"s{i + 1:02d}", Label.SKILLED))
        writers[wid] = rec
    ds = Dataset(writers, Provenance.SYNTHETIC)
    ds.validate()
    return ds


__all__ = [
    "Label", "Provenance", "SignaturePoint", "SignatureSample", "WriterRecord", "Dataset",
    "SynthConfig", "SignatureFormatError", "parse_svc", "write_svc", "svc_metadata_from_filename",
    "parse_canonical", "write_canonical", "save_dataset", "load_dataset", "load_svc_dir",
    "generate_synthetic_dataset",
]
