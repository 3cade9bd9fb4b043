"""On-disk artifacts: JSON-lines sequence records, JSON reports, CSV tables.

Floats are written with 17 significant digits so every value round-trips
bit-exactly, and identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np


def _dump_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    text = format(x, ".17g")
    # keep the value a float when read back (1.0 must not become 1)
    return text if any(c in text for c in ".en") else text + ".0"


def dumps17(obj) -> str:
    """Compact, key-sorted JSON with 17-significant-digit floats."""
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _dump_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(json.dumps(k) + ":" + dumps17(v) for k, v in items) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(dumps17(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


@dataclass
class SequenceRecord:
    tokens: List[int]
    positions: List[Optional[int]]
    msg: Optional[List[int]]
    params_digest: str
    seed: int
    u: Optional[List[Optional[List[float]]]] = None
    label: str = "watermarked"
    index: int = 0

    def to_dict(self) -> dict:
        return {
            "tokens": self.tokens,
            "positions": self.positions,
            "u": self.u,
            "msg": self.msg,
            "params_digest": self.params_digest,
            "seed": self.seed,
            "label": self.label,
            "index": self.index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceRecord":
        return cls(
            tokens=[int(t) for t in d["tokens"]],
            positions=list(d["positions"]),
            msg=None if d.get("msg") is None else [int(s) for s in d["msg"]],
            params_digest=d["params_digest"],
            seed=int(d["seed"]),
            u=d.get("u"),
            label=d.get("label", "watermarked"),
            index=int(d.get("index", 0)),
        )


def write_jsonl(path, records: Iterable[SequenceRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(dumps17(r.to_dict()))
            fh.write("\n")


def read_jsonl(path) -> List[SequenceRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(SequenceRecord.from_dict(json.loads(line)))
    return out


def write_json(path, obj) -> None:
    Path(path).write_text(dumps17(obj) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_csv(path, rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> None:
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_csv_cell(r.get(c)) for c in columns])


def _csv_cell(v):
    if isinstance(v, (float, np.floating)):
        return _dump_float(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if v is None:
        return ""
    return v


def read_csv(path) -> List[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
