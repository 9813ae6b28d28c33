"""Replica records and their JSON-lines persistence (single writer, resumable)."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

RECORD_FIELDS = ("replica_index", "b", "seed", "f", "fluct_stat", "xi1", "xi2", "gap", "counts",
                 "diagnostics", "wall_time", "n", "variant", "rejected")
NUMERIC_FIELDS = ("f", "fluct_stat", "xi1", "xi2", "gap")


@dataclass
class ReplicaRecord:
    replica_index: int
    b: float = None
    seed: list = None
    f: float = None
    fluct_stat: float = None
    xi1: float = None
    xi2: float = None
    gap: float = None
    counts: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    wall_time: float = 0.0
    n: int = None
    variant: str = "main"
    rejected: bool = False

    def __post_init__(self):
        if not self.rejected:
            for name in NUMERIC_FIELDS:
                v = getattr(self, name)
                if v is not None and not math.isfinite(v):
                    raise ValueError(f"record field {name!r} is not finite: {v!r}")

    @property
    def unit(self):
        return (self.variant, self.n, self.replica_index)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ReplicaRecord":
        unknown = set(d) - set(RECORD_FIELDS)
        if unknown:
            raise ValueError(f"unknown record fields {sorted(unknown)}")
        return cls(**d)

    def content(self) -> dict:
        """Everything except the wall clock (what replay must reproduce)."""
        d = self.to_dict()
        d.pop("wall_time")
        return d


def read_records(path) -> list:
    """All complete records in ``path``; a torn final line is ignored."""
    out = []
    if not os.path.exists(path):
        return out
    with open(path) as fh:
        for line in fh:
            if not line.endswith("\n"):
                break
            out.append(ReplicaRecord.from_dict(json.loads(line)))
    return out


def complete_units(records, per_unit: int) -> set:
    counts = {}
    for r in records:
        counts[r.unit] = counts.get(r.unit, 0) + 1
    return {u for u, c in counts.items() if c >= per_unit}


def repair(path, per_unit: int) -> set:
    """Drop a torn last line and any unit with missing records; return the finished units.

    The file is rewritten only if something had to go, so an intact file is
    left byte-identical.
    """
    if not os.path.exists(path):
        return set()
    with open(path) as fh:
        raw = fh.read()
    records = read_records(path)
    done = complete_units(records, per_unit)
    keep = [r for r in records if r.unit in done]
    if len(keep) != len(records) or not (raw == "" or raw.endswith("\n")):
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            for r in keep:
                fh.write(r.to_json() + "\n")
        os.replace(tmp, path)
    return done


class RecordWriter:
    """Append-only writer; each call writes one replica unit and flushes."""

    def __init__(self, path):
        self.path = path
        d = os.path.dirname(os.path.abspath(path))
        os.makedirs(d, exist_ok=True)
        self._fh = open(path, "a")

    def write_unit(self, records):
        self._fh.write("".join(r.to_json() + "\n" for r in records))
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def same_content(a, b) -> bool:
    """Record lists equal up to wall time (replay/resume check)."""
    return [r.content() for r in a] == [r.content() for r in b]
