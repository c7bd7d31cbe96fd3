"""Few-shot, writer-dependent evaluation protocol.

For every writer, training-set size ``g`` and trial, a fresh split is drawn:
``g`` own genuine samples plus ``g`` genuine samples of other writers
(random forgeries) for training; the writer's remaining genuine samples,
all its skilled forgeries and a disjoint draw of other writers' genuine
samples for testing. Feature reduction and normalisation are fitted on the
training genuine samples only, a model is trained, and skilled / random EERs
are computed from its eval-mode scores.

Dataset-level figures are the arithmetic mean of per-(writer, trial) EERs.
AER is evaluated at the skilled-forgery EER threshold.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, InsufficientGenuine, SigforgeError, SingleWriterDataset
from .features import FeatureSignatureMatrix, catalogue, extract_features
from .metrics import ErrorCurves, compute_aer, compute_curves, compute_eer, eer_with_threshold, rates_at
from .nn import ArchConfig, Hyper, model_forward, train_model
from .reduce import WriterReduction, fit_writer_reduction
from .signals import Dataset

log = logging.getLogger(__name__)

PAPER_G = (1, 5, 10, 15, 20)
CATEGORIES = ("skilled", "random")

SampleKey = tuple[str, str]


@dataclass(frozen=True)
class ProtocolConfig:
    genuine_train_counts: tuple[int, ...] = PAPER_G
    trials: int = 20
    k_reduced: int = 40
    catalogue_size: int = 47
    val_fraction: float = 0.6
    seed: int = 0
    epochs: int = 800
    batch_size: int = 16
    lr: float = 1e-3
    dropout_rate: float = 0.5
    threshold_grid: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "genuine_train_counts", tuple(int(g) for g in self.genuine_train_counts))
        if not self.genuine_train_counts or min(self.genuine_train_counts) < 1:
            raise ConfigError("genuine_train_counts must be positive")
        if self.trials < 1:
            raise ConfigError("trials must be positive")
        if not 1 <= self.k_reduced <= self.catalogue_size:
            raise ConfigError(f"k_reduced={self.k_reduced} must lie in 1..{self.catalogue_size}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")

    def validate_against(self, dataset: Dataset) -> None:
        if len(dataset.writers) < 2:
            raise SingleWriterDataset("the protocol needs at least two writers")
        fewest = min(len(r.genuine) for r in dataset.writers.values())
        if max(self.genuine_train_counts) > fewest - 1:
            raise InsufficientGenuine(
                f"g={max(self.genuine_train_counts)} leaves no test genuine for a writer with {fewest}")

    def echo(self) -> dict:
        d = asdict(self)
        d["genuine_train_counts"] = ",".join(map(str, self.genuine_train_counts))
        return d

    def hyper(self) -> Hyper:
        return Hyper(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs)


def trial_seed(seed: int, writer_id: str, g: int, trial_index: int) -> int:
    """Stable 64-bit stream id for one (writer, g, trial) task."""
    digest = hashlib.sha256(f"{seed}|{writer_id}|{g}|{trial_index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class TrialSplit:
    writer_id: str
    train_genuine: tuple[str, ...]
    train_random_forgery: tuple[SampleKey, ...]
    test_genuine: tuple[str, ...]
    test_skilled: tuple[str, ...]
    test_random: tuple[SampleKey, ...]
    trial_index: int
    seed: int

    @property
    def g(self) -> int:
        return len(self.train_genuine)


def split_trial(dataset: Dataset, writer_id: str, g: int, trial_index: int, seed: int) -> TrialSplit:
    if len(dataset.writers) < 2:
        raise SingleWriterDataset("random forgeries need at least two writers")
    rec = dataset.writers[writer_id]
    own = [s.sample_id for s in rec.genuine]
    if g >= len(own):
        raise InsufficientGenuine(f"writer {writer_id}: g={g} leaves no test genuine of {len(own)}")
    ts = trial_seed(seed, writer_id, g, trial_index)
    rng = np.random.default_rng(ts)
    perm = rng.permutation(len(own))
    train = tuple(sorted(own[i] for i in perm[:g]))
    test = tuple(sorted(own[i] for i in perm[g:]))
    skilled = tuple(s.sample_id for s in rec.skilled_forgeries)
    pool = [(w, s.sample_id) for w, r in dataset.writers.items() if w != writer_id for s in r.genuine]
    if len(pool) < g:
        raise InsufficientGenuine(f"only {len(pool)} other-writer samples for {g} random forgeries")
    order = rng.permutation(len(pool))
    n_random = len(skilled) if skilled else len(test)
    train_rf = tuple(pool[i] for i in order[:g])
    test_rf = tuple(sorted(pool[i] for i in order[g:g + n_random]))
    return TrialSplit(writer_id, train, train_rf, test, skilled, test_rf, trial_index, ts)


FeatureTable = dict[SampleKey, np.ndarray]


def compute_feature_table(dataset: Dataset, catalogue_size: int) -> FeatureTable:
    cat = catalogue(catalogue_size)
    return {(w, s.sample_id): extract_features(s, cat).values
            for w, rec in dataset.writers.items() for s in rec.samples()}


def fit_split_reduction(features: FeatureTable, split: TrialSplit, k: int) -> WriterReduction:
    """Reduction fitted on the split's training genuine samples only."""
    cat_id = catalogue(len(next(iter(features.values())))).catalogue_id
    cols = np.column_stack([features[(split.writer_id, s)] for s in split.train_genuine])
    fs = FeatureSignatureMatrix(split.writer_id, cols, cat_id)
    return fit_writer_reduction(fs, k, split.seed)


@dataclass(frozen=True)
class TrialRecord:
    writer: str
    g: int
    trial: int
    eer_skilled: float
    threshold_skilled: float
    eer_random: float
    threshold_random: float
    frr_op: float
    far_skilled_op: float
    far_random_op: float
    aer: float
    n_test_genuine: int
    n_test_skilled: int
    n_test_random: int
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _opt_val_split(n: int, frac: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_opt = min(max(1, math.floor(frac * n)), n - 1)
    return np.sort(perm[:n_opt]), np.sort(perm[n_opt:])


def prepare_training(features: FeatureTable, split: TrialSplit, reduction: WriterReduction,
                     config: ProtocolConfig):
    """Labelled model inputs; returns ``(x, y, val)`` with ``val`` possibly None."""
    xg = reduction.transform(np.stack([features[(split.writer_id, s)] for s in split.train_genuine]))
    xf = reduction.transform(np.stack([features[k] for k in split.train_random_forgery]))
    if split.g < 5:
        x = np.concatenate([xg, xf])
        y = np.concatenate([np.ones(len(xg)), np.zeros(len(xf))])
        return x, y, None
    # stratified so both classes appear on each side
    rng = np.random.default_rng([split.seed, 1])
    og, vg = _opt_val_split(len(xg), config.val_fraction, rng)
    of, vf = _opt_val_split(len(xf), config.val_fraction, rng)
    x = np.concatenate([xg[og], xf[of]])
    y = np.concatenate([np.ones(og.size), np.zeros(of.size)])
    xv = np.concatenate([xg[vg], xf[vf]])
    yv = np.concatenate([np.ones(vg.size), np.zeros(vf.size)])
    return x, y, (xv, yv)


def score_split(features: FeatureTable, split: TrialSplit, config: ProtocolConfig):
    """Train the writer model and return eval-mode scores per test category."""
    reduction = fit_split_reduction(features, split, config.k_reduced)
    x, y, val = prepare_training(features, split, reduction, config)
    arch = ArchConfig(input_len=config.k_reduced, dropout_rate=config.dropout_rate)
    params, _ = train_model(x, y, arch, seed=split.seed, val=val, hyper=config.hyper())

    def scores(keys) -> np.ndarray:
        return model_forward(params, reduction.transform(np.stack([features[k] for k in keys])))

    w = split.writer_id
    return (scores([(w, s) for s in split.test_genuine]),
            scores([(w, s) for s in split.test_skilled]) if split.test_skilled else np.empty(0),
            scores(split.test_random) if split.test_random else np.empty(0))


def _eer(gen: np.ndarray, forg: np.ndarray, grid) -> tuple[float, float]:
    if forg.size == 0:
        return math.nan, math.nan
    curves = compute_curves(gen, forg, grid)
    curves.check()
    return eer_with_threshold(curves)


def run_writer_trial(features: FeatureTable, split: TrialSplit, config: ProtocolConfig) -> TrialRecord:
    gen, skl, rnd = score_split(features, split, config)
    eer_s, thr_s = _eer(gen, skl, config.threshold_grid)
    eer_r, thr_r = _eer(gen, rnd, config.threshold_grid)
    op = thr_s if not math.isnan(thr_s) else thr_r
    frr, far_s = rates_at(gen, skl, op) if skl.size else (rates_at(gen, rnd, op)[0], math.nan)
    far_r = rates_at(gen, rnd, op)[1] if rnd.size else math.nan
    return TrialRecord(split.writer_id, split.g, split.trial_index, eer_s, thr_s, eer_r, thr_r,
                       frr, far_s, far_r, compute_aer(frr, far_s, far_r),
                       gen.size, skl.size, rnd.size)


# --- protocol driver -----------------------------------------------------------

_WORKER: dict = {}


def _init_worker(dataset: Dataset, features: FeatureTable, config: ProtocolConfig) -> None:
    _WORKER.update(dataset=dataset, features=features, config=config)


def _run_task(task: tuple[str, int, int]) -> TrialRecord:
    writer, g, trial = task
    ds, features, config = _WORKER["dataset"], _WORKER["features"], _WORKER["config"]
    try:
        split = split_trial(ds, writer, g, trial, config.seed)
        return run_writer_trial(features, split, config)
    except SigforgeError as e:
        nan = math.nan
        return TrialRecord(writer, g, trial, nan, nan, nan, nan, nan, nan, nan, nan, 0, 0, 0,
                           status=f"failed:{type(e).__name__}")


@dataclass(frozen=True)
class Aggregate:
    g: int
    metric: str
    mean: float
    std: float
    n: int


@dataclass
class EvalReport:
    config: dict
    records: list[TrialRecord]
    aggregates: list[Aggregate] = field(default_factory=list)
    n_failed: int = 0
    wall_clock_s: float = 0.0

    def aggregate(self, g: int, metric: str) -> Aggregate:
        for a in self.aggregates:
            if a.g == g and a.metric == metric:
                return a
        raise KeyError((g, metric))

    def mean_eer(self, g: int, category: str) -> float:
        return self.aggregate(g, f"eer_{category}").mean


AGG_METRICS = ("eer_skilled", "eer_random", "aer")


def aggregate_records(records: Iterable[TrialRecord], counts: Sequence[int]) -> list[Aggregate]:
    records = list(records)
    out = []
    for g in counts:
        for metric in AGG_METRICS:
            vals = np.array([getattr(r, metric) for r in records if r.g == g and r.ok], dtype=np.float64)
            vals = vals[~np.isnan(vals)]
            if vals.size:
                out.append(Aggregate(g, metric, float(np.mean(vals)), float(np.std(vals)), int(vals.size)))
            else:
                out.append(Aggregate(g, metric, math.nan, math.nan, 0))
    return out


def protocol_tasks(dataset: Dataset, config: ProtocolConfig) -> list[tuple[str, int, int]]:
    return [(w, g, t) for w in dataset.writers for g in config.genuine_train_counts for t in range(config.trials)]


def run_protocol(dataset: Dataset, config: ProtocolConfig, threads: int = 1,
                 features: FeatureTable | None = None) -> EvalReport:
    """Run every (writer, g, trial) task; results are independent of ``threads``."""
    config.validate_against(dataset)
    start = time.perf_counter()
    if features is None:
        features = compute_feature_table(dataset, config.catalogue_size)
    tasks = protocol_tasks(dataset, config)
    if threads <= 1:
        _init_worker(dataset, features, config)
        records = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                                 initargs=(dataset, features, config)) as pool:
            records = list(pool.map(_run_task, tasks, chunksize=1))
    n_failed = sum(not r.ok for r in records)
    if n_failed:
        log.warning("failed_trials=%d", n_failed)
    echo = config.echo()
    echo["aggregation"] = "mean_over_writer_trials"
    echo["aer_operating_point"] = "skilled_eer_threshold"
    return EvalReport(echo, records, aggregate_records(records, config.genuine_train_counts),
                      n_failed, time.perf_counter() - start)


# --- report files ----------------------------------------------------------------

RECORD_COLUMNS = ("writer", "g", "trial", "category", "eer", "threshold", "n_test_genuine", "n_test_forgery")
TRIAL_COLUMNS = ("writer", "g", "trial", "status", "frr_op", "far_skilled_op", "far_random_op", "aer")
SUMMARY_COLUMNS = tuple(f"S_{g:02d}" for g in PAPER_G) + tuple(f"R_{g:02d}" for g in PAPER_G)


def _echo_lines(config: dict) -> list[str]:
    return [f"# {k}={v}" for k, v in config.items()]


def format_records(report: EvalReport) -> str:
    lines = ["# sigforge evaluate: per-trial records", *_echo_lines(report.config), "\t".join(RECORD_COLUMNS)]
    for r in report.records:
        for cat in CATEGORIES:
            eer = r.eer_skilled if cat == "skilled" else r.eer_random
            thr = r.threshold_skilled if cat == "skilled" else r.threshold_random
            n_f = r.n_test_skilled if cat == "skilled" else r.n_test_random
            lines.append("\t".join([r.writer, str(r.g), str(r.trial), cat, repr(eer), repr(thr),
                                    str(r.n_test_genuine), str(n_f)]))
    return "\n".join(lines) + "\n"


def parse_records(text: str) -> list[dict]:
    rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    header = rows[0].split("\t")
    if tuple(header) != RECORD_COLUMNS:
        raise DataError("unexpected record columns")
    out = []
    for ln in rows[1:]:
        v = dict(zip(header, ln.split("\t")))
        out.append({"writer": v["writer"], "g": int(v["g"]), "trial": int(v["trial"]),
                    "category": v["category"], "eer": float(v["eer"]), "threshold": float(v["threshold"]),
                    "n_test_genuine": int(v["n_test_genuine"]), "n_test_forgery": int(v["n_test_forgery"])})
    return out


def format_trials(report: EvalReport) -> str:
    """One row per (writer, g, trial): status and the AER operating-point rates."""
    lines = ["# sigforge evaluate: per-trial operating point", *_echo_lines(report.config),
             "\t".join(TRIAL_COLUMNS)]
    for r in report.records:
        lines.append("\t".join([r.writer, str(r.g), str(r.trial), r.status, repr(r.frr_op),
                                repr(r.far_skilled_op), repr(r.far_random_op), repr(r.aer)]))
    return "\n".join(lines) + "\n"


def format_aggregates(report: EvalReport) -> str:
    lines = ["# sigforge evaluate: aggregates over writers and trials", *_echo_lines(report.config),
             f"# failed_trials={report.n_failed}", "g\tmetric\tmean\tstd\tn"]
    for a in report.aggregates:
        lines.append(f"{a.g}\t{a.metric}\t{a.mean!r}\t{a.std!r}\t{a.n}")
    return "\n".join(lines) + "\n"


def format_summary(report: EvalReport) -> str:
    """Mean EER in percent laid out as one method row (S = skilled, R = random)."""
    cells = []
    for cat in CATEGORIES:
        for g in PAPER_G:
            try:
                v = report.mean_eer(g, cat)
            except KeyError:
                v = math.nan
            cells.append("-" if math.isnan(v) else f"{100 * v:.2f}")
    lines = ["# sigforge evaluate: mean EER (%)", *_echo_lines(report.config),
             "\t".join(("method",) + SUMMARY_COLUMNS), "\t".join(["Proposed Model", *cells])]
    return "\n".join(lines) + "\n"


REPORT_FILES = ("records.tsv", "trials.tsv", "aggregates.tsv", "summary.tsv")


def write_report(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Write the report files; wall-clock time goes to a separate ``timing.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in zip(REPORT_FILES, (format_records(report), format_trials(report),
                                          format_aggregates(report), format_summary(report))):
        (out / name).write_text(text)
        paths.append(out / name)
    (out / "timing.txt").write_text(f"wall_clock_s={report.wall_clock_s:.3f}\nn_records={len(report.records)}\n")
    return paths


__all__ = [
    "ProtocolConfig", "TrialSplit", "TrialRecord", "EvalReport", "Aggregate", "ErrorCurves",
    "split_trial", "run_writer_trial", "run_protocol", "compute_curves", "compute_eer", "compute_aer",
    "compute_feature_table", "fit_split_reduction", "trial_seed", "write_report", "format_records",
    "parse_records", "format_trials", "format_aggregates", "format_summary", "aggregate_records",
]
