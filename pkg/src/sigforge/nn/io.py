"""ModelParams on disk: a flat little-endian float64 blob plus a text manifest.

Manifest layout::

    #MODEL seed=<seed> dtype=<f8 little-endian> total=<n values>
    #config <key>=<value> ...
    <block>\t<shape as a,b,c>\t<byte offset>
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from ..errors import DataError
from .model import ArchConfig, ModelParams


def _fmt_cfg(cfg: ArchConfig) -> str:
    return " ".join(f"{k}={v}" for k, v in cfg.echo().items())


def save_params(params: ModelParams, stem: str | os.PathLike, seed: int = 0,
                extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.bin`` and ``<stem>.manifest``."""
    stem = Path(stem)
    offset = 0
    rows = []
    blobs = []
    for name, arr in params.arrays.items():
        rows.append(f"{name}\t{','.join(map(str, arr.shape))}\t{offset}")
        blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        offset += arr.size * 8
    head = [f"#MODEL seed={seed} dtype=<f8 total={offset // 8}", f"#config {_fmt_cfg(params.config)}"]
    for k, v in (extra or {}).items():
        head.append(f"#echo {k}={v}")
    bin_path = stem.with_suffix(".bin")
    man_path = stem.with_suffix(".manifest")
    bin_path.write_bytes(b"".join(blobs))
    man_path.write_text("\n".join(head + rows) + "\n")
    return bin_path, man_path


def _parse_value(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def load_params(stem: str | os.PathLike) -> ModelParams:
    stem = Path(stem)
    lines = stem.with_suffix(".manifest").read_text().splitlines()
    blob = stem.with_suffix(".bin").read_bytes()
    cfg_kw = {}
    blocks = []
    for line in lines:
        if line.startswith("#config "):
            cfg_kw = {k: _parse_value(v) for k, v in (t.split("=", 1) for t in line.split()[1:])}
        elif line.startswith("#"):
            continue
        elif line.strip():
            name, shape, offset = line.split("\t")
            blocks.append((name, tuple(int(s) for s in shape.split(",") if s), int(offset)))
    if not cfg_kw:
        raise DataError("manifest lacks #config line")
    cfg = ArchConfig(**cfg_kw)
    arrays = {}
    for name, shape, offset in blocks:
        count = int(np.prod(shape))
        if offset + count * 8 > len(blob):
            raise DataError(f"block {name} runs past end of blob")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
    return ModelParams(cfg, arrays)
