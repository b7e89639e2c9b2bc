"""File formats: CSV and binary datasets, configuration JSON, sample and
table outputs."""

from __future__ import annotations

import csv
import json
import math
import struct
from importlib import resources
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .core import Dataset, HyperParams
from .errors import DimensionMismatch, InputError
from .search import ModelPosteriorTable, PosteriorSamples

MAGIC = b"ESB1"
_HEADER = struct.Struct("<4sQQ")
BUNDLED_PREFIX = "@"


def resolve_path(path) -> Path:
    """Map ``@name`` to a bundled data file, anything else to a plain path."""
    s = str(path)
    if s.startswith(BUNDLED_PREFIX):
        name = s[1:]
        base = resources.files("esb") / "data"
        for cand in (name, name + ".csv", name + ".json"):
            f = base / cand
            if f.is_file():
                return Path(str(f))
        raise InputError(f"no bundled file named {name!r}")
    p = Path(s)
    if not p.is_file():
        raise InputError(f"file not found: {s}")
    return p


def _parse_rows(path: Path, expect: Optional[int] = None) -> Tuple[List[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        width = len(header) if expect is None else expect
        if len(header) != width:
            raise DimensionMismatch(f"{path}: header has {len(header)} columns, expected {width}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise InputError(f"{path}: row {line_no} has {len(row)} fields, expected {width}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise InputError(f"{path}: row {line_no} contains a non-numeric field") from None
    if not rows:
        raise InputError(f"{path}: no data rows")
    return header, np.array(rows)


def read_csv_dataset(path) -> Dataset:
    """CSV with a header row; the first column is the response."""
    path = resolve_path(path)
    header, a = _parse_rows(path)
    if a.shape[1] < 2:
        raise InputError(f"{path}: need a response column and at least one predictor")
    return Dataset(a[:, 0], a[:, 1:])


def read_csv_matrix(path, p: int) -> np.ndarray:
    """CSV of predictor rows (header, ``p`` columns, no response)."""
    return _parse_rows(resolve_path(path), expect=p)[1]


def write_bin_dataset(d: Dataset, path) -> None:
    """``ESB1`` header, then ``n`` and ``p`` as little-endian u64, then the
    rows ``(y_i, x_i1, ..., x_ip)`` as little-endian f64."""
    body = np.column_stack([d.y, d.X]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, d.n, d.p))
        fh.write(body.tobytes(order="C"))


def read_bin_dataset(path) -> Dataset:
    path = resolve_path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise InputError(f"{path}: truncated header")
    magic, n, p = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}")
    need = _HEADER.size + 8 * n * (p + 1)
    if len(raw) != need:
        raise InputError(f"{path}: expected {need} bytes for n={n}, p={p}, found {len(raw)}")
    a = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n, p + 1)
    return Dataset(a[:, 0], a[:, 1:])


def read_dataset(path, fmt: str = "csv") -> Dataset:
    if fmt == "csv":
        return read_csv_dataset(path)
    if fmt == "bin":
        return read_bin_dataset(path)
    raise InputError(f"unknown format {fmt!r}")


def read_json(path) -> dict:
    path = resolve_path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def read_hyperparams(path) -> HyperParams:
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise InputError("hyperparameter file must hold a JSON object")
    doc.pop("schema_version", None)
    return HyperParams.from_dict(doc)


def dumps(doc, indent: Optional[int] = 2) -> str:
    """Canonical JSON: sorted keys and shortest round-trip floats."""
    return json.dumps(doc, sort_keys=True, indent=indent, allow_nan=True)


def write_json(doc, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(doc) + "\n")
    return path


def sample_records(samples: PosteriorSamples) -> Iterable[dict]:
    for m, s2, b in zip(samples.models, samples.sigma2_draws, samples.beta_draws):
        yield {"model": list(m), "sigma2": float(s2), "beta": [float(v) for v in b]}


def write_samples_jsonl(samples: PosteriorSamples, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in sample_records(samples):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def read_samples_jsonl(path, p: int) -> PosteriorSamples:
    models, s2, betas = [], [], []
    with open(resolve_path(path)) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                m = tuple(int(j) for j in rec["model"])
                b = np.array(rec["beta"], dtype=float)
                v = float(rec["sigma2"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise InputError(f"{path}: malformed record on line {line_no}") from None
            if len(b) != len(m):
                raise DimensionMismatch(f"{path}: line {line_no} has {len(m)} indices and {len(b)} coefficients")
            models.append(m)
            s2.append(v)
            betas.append(b)
    return PosteriorSamples(p=p, models=models, sigma2_draws=np.array(s2), beta_draws=betas,
                            acceptance_rate=math.nan)


def _finite(v):
    return v if math.isfinite(v) else None


def table_to_dict(table: ModelPosteriorTable) -> dict:
    return {
        "p": table.p,
        "normalizer": table.normalizer,
        "models": [
            {"model": list(m), "probability": q, "log_posterior": _finite(table.log_posteriors.get(m, -math.inf))}
            for m, q in table.entries.items()
        ],
        "singular": [list(m) for m in table.singular],
    }
