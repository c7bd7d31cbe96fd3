"""``sigforge`` command line.

Grammar::

    sigforge <synth|convert|extract|reduce|train|evaluate|gradcheck> [--config FILE] [--key value]...

``--config`` names a flat ``key=value`` file (``#`` starts a comment); any
key may also be given as a flag, and flags win. ``SIGFORGE_SEED`` is used
when no seed is configured. Exit codes: 0 ok, 1 usage, 2 data error,
3 numerical failure. Logs go to stderr as ``ts level key=value`` lines;
results are written only under ``output_dir``.
"""

from __future__ import annotations

import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericalError, SigforgeError
from .features import FeatureSignatureMatrix, catalogue, extract_features
from .nn import ArchConfig, save_params, train_model
from .nn.gradcheck import run_gradcheck
from .protocol import (
    ProtocolConfig,
    compute_feature_table,
    fit_split_reduction,
    prepare_training,
    run_protocol,
    split_trial,
    write_report,
)
from .reduce import fit_writer_reduction
from .signals import Dataset, SynthConfig, generate_synthetic_dataset, load_dataset, load_svc_dir, save_dataset

log = logging.getLogger("sigforge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4

COMMANDS = ("synth", "convert", "extract", "reduce", "train", "evaluate", "gradcheck")
USAGE = (
    "usage: sigforge <synth|convert|extract|reduce|train|evaluate|gradcheck> [--config FILE] [--key value]...\n"
    "\n"
    "  synth      write a synthetic dataset as canonical files\n"
    "  convert    SVC-2004 directory (--input_dir) -> canonical dataset\n"
    "  extract    dataset -> features.tsv + catalogue.manifest\n"
    "  reduce     per-writer reduced feature index sets (<writer>.fs)\n"
    "  train      per-writer models for one split (--g, --trial)\n"
    "  evaluate   full protocol -> records/aggregates/summary reports (--threads N)\n"
    "  gradcheck  finite-difference check of every network layer\n"
)


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _counts(v: str) -> tuple[int, ...]:
    return tuple(int(t) for t in v.split(",") if t.strip())


def _opt_int(v: str) -> int | None:
    return None if v.strip().lower() in ("", "none", "-") else int(v)


# key -> parser; every recognised key lives here
KEYS: dict[str, Callable[[str], object]] = {
    "output_dir": str,
    "log_level": str,
    "seed": int,
    "dataset_path": str,
    "dataset_format": str,
    "input_dir": str,
    "writers": int,
    "genuine": int,
    "skilled": int,
    "points": int,
    "writer_separation": float,
    "intra_noise": float,
    "forgery_noise": float,
    "chance_control": _bool,
    "catalogue": int,
    "k_reduced": int,
    "genuine_train_counts": _counts,
    "trials": int,
    "val_fraction": float,
    "epochs": int,
    "batch_size": int,
    "lr": float,
    "dropout_rate": float,
    "threshold_grid": _opt_int,
    "g": int,
    "trial": int,
    "threads": int,
}
SYNTH_KEYS = ("writers", "genuine", "skilled", "points", "writer_separation", "intra_noise",
              "forgery_noise", "chance_control")


class UsageError(Exception):
    pass


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def parse_args(argv: Sequence[str]) -> tuple[str, dict[str, str]]:
    """Split argv into the subcommand and a merged raw key/value mapping."""
    if not argv or argv[0] not in COMMANDS:
        raise UsageError("unknown or missing subcommand" if argv else "missing subcommand")
    cmd, rest = argv[0], list(argv[1:])
    flags: dict[str, str] = {}
    while rest:
        tok = rest.pop(0)
        if not tok.startswith("--") or len(tok) < 3:
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        elif rest:
            val = rest.pop(0)
        else:
            raise UsageError(f"flag {tok} needs a value")
        flags[key.replace("-", "_")] = val
    merged = read_config_file(flags.pop("config")) if "config" in flags else {}
    merged.update(flags)
    for k in merged:
        if k not in KEYS:
            raise UsageError(f"unknown key {k!r}")
    return cmd, merged


def _typed(raw: dict[str, str]) -> dict[str, object]:
    out = {}
    for k, v in raw.items():
        try:
            out[k] = KEYS[k](v)
        except ValueError as e:
            raise UsageError(f"bad value for {k}: {e}") from None
    return out


@dataclass
class RunConfig:
    """Resolved settings shared by all subcommands."""

    output_dir: Path
    seed: int
    log_level: str = "INFO"
    dataset_path: Path | None = None
    dataset_format: str = "canonical"
    synth: SynthConfig | None = None
    catalogue: int = 47
    k_reduced: int = 40
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, values: dict[str, object]) -> "RunConfig":
        v = dict(values)
        if "output_dir" not in v:
            raise UsageError("output_dir is required")
        seed = v.pop("seed", None)
        if seed is None:
            env = os.environ.get("SIGFORGE_SEED")
            try:
                seed = int(env) if env is not None else 0
            except ValueError:
                raise UsageError(f"SIGFORGE_SEED is not an integer: {env!r}") from None
        if not 0 <= seed < 2**64:
            raise UsageError("seed must be a 64-bit unsigned integer")
        synth_given = [k for k in SYNTH_KEYS if k in v]
        dataset_path = v.pop("dataset_path", None)
        if dataset_path is not None and synth_given:
            raise UsageError("give either dataset_path or synthetic-dataset keys, not both")
        synth = None
        if dataset_path is None:
            synth = SynthConfig(
                num_writers=v.pop("writers", 20), genuine_per_writer=v.pop("genuine", 25),
                skilled_per_writer=v.pop("skilled", 25), points_per_signature=v.pop("points", 128),
                writer_separation=v.pop("writer_separation", 1.0), intra_noise=v.pop("intra_noise", 0.02),
                forgery_noise=v.pop("forgery_noise", 0.15), seed=seed,
                chance_control=v.pop("chance_control", False))
        fmt = v.pop("dataset_format", "canonical")
        if fmt not in ("canonical", "svc"):
            raise UsageError("dataset_format must be canonical or svc")
        cat = v.pop("catalogue", 47)
        if cat not in (47, 100):
            raise UsageError("catalogue must be 47 or 100")
        k = v.pop("k_reduced", 40)
        if not k < cat:
            raise UsageError(f"k_reduced={k} must be smaller than the catalogue size {cat}")
        proto_kw = {key: v.pop(key) for key in ("genuine_train_counts", "trials", "val_fraction", "epochs",
                                                 "batch_size", "lr", "dropout_rate", "threshold_grid")
                    if key in v}
        protocol = ProtocolConfig(k_reduced=k, catalogue_size=cat, seed=seed, **proto_kw)
        return cls(Path(v.pop("output_dir")), seed, str(v.pop("log_level", "INFO")).upper(),
                   Path(dataset_path) if dataset_path else None, fmt, synth, cat, k, protocol, v)

    def echo(self) -> dict[str, object]:
        d: dict[str, object] = {"seed": self.seed}
        if self.dataset_path is not None:
            d["dataset_path"] = self.dataset_path
            d["dataset_format"] = self.dataset_format
        else:
            s = self.synth
            d.update(writers=s.num_writers, genuine=s.genuine_per_writer, skilled=s.skilled_per_writer,
                     points=s.points_per_signature, writer_separation=s.writer_separation,
                     intra_noise=s.intra_noise, forgery_noise=s.forgery_noise,
                     chance_control=s.chance_control)
        d.update(catalogue=self.catalogue, k_reduced=self.k_reduced)
        d.update({k: v for k, v in self.protocol.echo().items() if k not in ("seed", "k_reduced", "catalogue_size")})
        d.update(self.extra)
        return d

    def dataset(self) -> Dataset:
        if self.dataset_path is None:
            return generate_synthetic_dataset(self.synth)
        if self.dataset_format == "svc":
            return load_svc_dir(self.dataset_path)
        return load_dataset(self.dataset_path)


# --- logging ---------------------------------------------------------------------

class _KVFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        ts = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(record.created))
        return f"{ts}.{int(record.msecs):03d}Z {record.levelname} {record.getMessage()}"


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_KVFormatter())
    root = logging.getLogger("sigforge")
    root.handlers[:] = [handler]
    root.propagate = False
    root.setLevel(getattr(logging, level, logging.INFO))


def _kv(**fields) -> str:
    return " ".join(f"{k}={v}" for k, v in fields.items())


def _echo_lines(echo: dict) -> list[str]:
    return [f"# {k}={v}" for k, v in echo.items()]


# --- subcommands ---------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    if cfg.synth is None:
        raise UsageError("synth takes synthetic-dataset keys, not dataset_path")
    ds = generate_synthetic_dataset(cfg.synth)
    save_dataset(ds, cfg.output_dir, echo=cfg.echo())
    log.info(_kv(event="synth", writers=len(ds.writers), out=cfg.output_dir))
    return EXIT_OK


def cmd_convert(cfg: RunConfig) -> int:
    src = cfg.extra.pop("input_dir", None)
    if src is None:
        raise UsageError("convert needs --input_dir")
    ds = load_svc_dir(src)
    save_dataset(ds, cfg.output_dir, echo={"input_dir": src, "seed": cfg.seed})
    log.info(_kv(event="convert", writers=len(ds.writers), samples=sum(len(r.samples()) for r in ds.writers.values())))
    return EXIT_OK


def cmd_extract(cfg: RunConfig) -> int:
    ds = cfg.dataset()
    cat = catalogue(cfg.catalogue)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    lines = ["# sigforge extract: raw feature vectors", *_echo_lines(cfg.echo()),
             f"# catalogue_id={cat.catalogue_id}", "\t".join(["writer", "sample", "label", *cat.names])]
    n_head = len(lines)
    for wid, rec in ds.writers.items():
        for s in rec.samples():
            v = extract_features(s, cat).values
            lines.append("\t".join([wid, s.sample_id, s.label.value, *map(repr, v.tolist())]))
    (cfg.output_dir / "features.tsv").write_text("\n".join(lines) + "\n")
    (cfg.output_dir / "catalogue.manifest").write_text(cat.manifest())
    log.info(_kv(event="extract", rows=len(lines) - n_head, catalogue=cat.catalogue_id))
    return EXIT_OK


def cmd_reduce(cfg: RunConfig) -> int:
    """Fit each writer's reduction on all of its genuine samples."""
    ds = cfg.dataset()
    features = compute_feature_table(ds, cfg.catalogue)
    cat_id = catalogue(cfg.catalogue).catalogue_id
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    for wid, rec in ds.writers.items():
        cols = np.column_stack([features[(wid, s.sample_id)] for s in rec.genuine])
        red = fit_writer_reduction(FeatureSignatureMatrix(wid, cols, cat_id), cfg.k_reduced, cfg.seed)
        (cfg.output_dir / f"{wid}.fs").write_text(red.index_set.to_text(cfg.echo()))
    log.info(_kv(event="reduce", writers=len(ds.writers), k=cfg.k_reduced))
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    g = cfg.extra.pop("g", cfg.protocol.genuine_train_counts[0])
    trial = cfg.extra.pop("trial", 0)
    ds = cfg.dataset()
    features = compute_feature_table(ds, cfg.catalogue)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    echo = {**cfg.echo(), "g": g, "trial": trial}
    arch = ArchConfig(input_len=cfg.k_reduced, dropout_rate=cfg.protocol.dropout_rate)
    for wid in ds.writers:
        split = split_trial(ds, wid, g, trial, cfg.seed)
        reduction = fit_split_reduction(features, split, cfg.k_reduced)
        x, y, val = prepare_training(features, split, reduction, cfg.protocol)
        params, hist = train_model(x, y, arch, seed=split.seed, val=val, hyper=cfg.protocol.hyper())
        save_params(params, cfg.output_dir / wid, seed=split.seed, extra=echo)
        (cfg.output_dir / f"{wid}.fs").write_text(reduction.index_set.to_text(echo))
        log.info(_kv(event="train", writer=wid, g=g, trial=trial, best_epoch=hist.best_epoch,
                     final_loss=f"{hist.train_loss[-1]:.6g}"))
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    threads = cfg.extra.pop("threads", 1)
    if threads < 1:
        raise UsageError("threads must be positive")
    ds = cfg.dataset()
    report = run_protocol(ds, cfg.protocol, threads=threads)
    report.config = {**cfg.echo(), **{k: v for k, v in report.config.items() if k in
                                      ("aggregation", "aer_operating_point")}}
    write_report(report, cfg.output_dir)
    for a in report.aggregates:
        log.info(_kv(event="aggregate", g=a.g, metric=a.metric, mean=f"{a.mean:.6g}", n=a.n))
    log.info(_kv(event="evaluate", records=len(report.records), failed=report.n_failed,
                 wall_clock_s=f"{report.wall_clock_s:.2f}"))
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    results = run_gradcheck(cfg.seed)
    worst = {layer: max(blocks.values()) for layer, blocks in results.items()}
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    lines = ["# sigforge gradcheck: max relative error per layer", f"# seed={cfg.seed}",
             f"# tolerance={GRADCHECK_TOL}", "layer\tmax_rel_error\tverdict"]
    for layer, err in worst.items():
        verdict = "pass" if err <= GRADCHECK_TOL else "FAIL"
        lines.append(f"{layer}\t{err:.3e}\t{verdict}")
        print(f"{layer:12s} {err:.3e} {verdict}")
    (cfg.output_dir / "gradcheck.tsv").write_text("\n".join(lines) + "\n")
    if max(worst.values()) > GRADCHECK_TOL:
        log.error(_kv(event="gradcheck", status="fail", worst=f"{max(worst.values()):.3e}"))
        return EXIT_NUMERIC
    return EXIT_OK


HANDLERS = {
    "synth": cmd_synth, "convert": cmd_convert, "extract": cmd_extract, "reduce": cmd_reduce,
    "train": cmd_train, "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck,
}
_COMMAND_KEYS = {"convert": {"input_dir"}, "train": {"g", "trial"}, "evaluate": {"threads"}}


def run_cli(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] in ("-h", "--help", "help"):
        sys.stdout.write(USAGE)
        return EXIT_OK
    try:
        cmd, raw = parse_args(argv)
        values = _typed(raw)
        stray = {k for k in ("input_dir", "g", "trial", "threads") if k in values} - _COMMAND_KEYS.get(cmd, set())
        if stray:
            raise UsageError(f"{cmd} does not take {', '.join(sorted(stray))}")
        cfg = RunConfig.from_mapping(values)
    except (UsageError, ConfigError, DataError) as e:  # DataError: SynthConfig validation
        sys.stderr.write(f"sigforge: {e}\n{USAGE}")
        return EXIT_USAGE
    _setup_logging(cfg.log_level)
    log.info(_kv(event="start", command=cmd, seed=cfg.seed, output_dir=cfg.output_dir))
    try:
        return HANDLERS[cmd](cfg)
    except (UsageError, ConfigError) as e:
        log.error(_kv(event="usage_error", error=type(e).__name__, msg=repr(str(e))))
        return EXIT_USAGE
    except NumericalError as e:
        log.error(_kv(event="numerical_failure", error=type(e).__name__, msg=repr(str(e))))
        return EXIT_NUMERIC
    except (DataError, SigforgeError, OSError) as e:
        log.error(_kv(event="data_error", error=type(e).__name__, msg=repr(str(e))))
        return EXIT_DATA


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
