"""Sweep CSV schema, atomic file writes and manifest helpers."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InputError
from .fairness import FairnessReport
from .probes import EncodingResult
from .short import SweepPoint

SWEEP_COLUMNS = ("lambda", "replicate", "seed", "clinical_auc", "encoding_kind", "encoding_value", "encoding_ci_lo",
                 "encoding_ci_hi", "separation", "tpr_slope", "fpr_slope", "independence", "sufficiency",
                 "equalized_odds", "max_gap", "excluded", "exclude_reason")
_FAIR_FIELDS = ("separation", "tpr_slope", "fpr_slope", "independence", "sufficiency", "equalized_odds", "max_gap")


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _fmt(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else "nan"


def sweep_rows(points: Sequence[SweepPoint]) -> list[dict]:
    rows = []
    for p in points:
        enc = p.encoding
        row = {
            "lambda": repr(float(p.lam)),
            "replicate": str(p.replicate),
            "seed": str(p.seed),
            "clinical_auc": _fmt(p.clinical_auc),
            "encoding_kind": enc.metric_kind if enc else "",
            "encoding_value": _fmt(enc.value) if enc else "nan",
            "encoding_ci_lo": _fmt(enc.ci95[0]) if enc else "nan",
            "encoding_ci_hi": _fmt(enc.ci95[1]) if enc else "nan",
        }
        for name in _FAIR_FIELDS:
            row[name] = _fmt(getattr(p.fairness, name))
        row["excluded"] = "true" if p.excluded else "false"
        row["exclude_reason"] = p.exclude_reason
        rows.append(row)
    return rows


def format_sweep_csv(points: Sequence[SweepPoint]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(sweep_rows(points))
    return buf.getvalue()


def write_sweep_csv(path, points: Sequence[SweepPoint]) -> None:
    atomic_write_text(path, format_sweep_csv(points))


def _float(row: dict, key: str, line: int) -> float:
    try:
        return float(row[key])
    except (TypeError, ValueError):
        raise InputError(f"line {line}: column {key!r} is not a number: {row[key]!r}") from None


def parse_sweep_csv(text: str, source: str = "<sweep>") -> list[SweepPoint]:
    """Parse a sweep CSV; any schema deviation raises ``InputError``."""
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != SWEEP_COLUMNS:
        raise InputError(f"{source}: header does not match the sweep schema {','.join(SWEEP_COLUMNS)}")
    points = []
    for line, row in enumerate(reader, start=2):
        if None in row or any(v is None for v in row.values()):
            raise InputError(f"{source} line {line}: wrong number of fields")
        if row["excluded"] not in ("true", "false"):
            raise InputError(f"{source} line {line}: excluded must be true or false")
        try:
            replicate, seed = int(row["replicate"]), int(row["seed"])
        except ValueError:
            raise InputError(f"{source} line {line}: replicate and seed must be integers") from None
        kind = row["encoding_kind"]
        if kind not in ("", "mae", "mse", "auroc"):
            raise InputError(f"{source} line {line}: unknown encoding_kind {kind!r}")
        enc = None
        if kind:
            enc = EncodingResult(kind, _float(row, "encoding_value", line),
                                 (_float(row, "encoding_ci_lo", line), _float(row, "encoding_ci_hi", line)), 0)
        fair = FairnessReport(clinical_auc=_float(row, "clinical_auc", line),
                              **{k: _float(row, k, line) for k in _FAIR_FIELDS})
        points.append(SweepPoint(_float(row, "lambda", line), replicate, seed, fair.clinical_auc, enc, fair,
                                 row["excluded"] == "true", row["exclude_reason"]))
    return points


def read_sweep_csv(path) -> list[SweepPoint]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"sweep file {path} does not exist") from None
    return parse_sweep_csv(text, str(path))


def encoding_kinds(points: Iterable[SweepPoint]) -> set:
    return {p.encoding.metric_kind for p in points if p.encoding is not None}
