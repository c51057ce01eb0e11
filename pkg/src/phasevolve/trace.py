"""JSON Lines trace log for evolution runs.

One self-contained record per line: a header carrying the fully resolved
config, one record per evaluated candidate, and one per training step. Lines
are written in a single call each, so concurrent readers never see a torn
record, and the serialization is canonical (sorted keys) so identical runs
produce identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

TRACE_VERSION = 1

STEP_SERIES = ("cumulative_max", "entropy", "grad_norm", "alpha")


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class TraceWriter:
    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8")

    def write_header(self, config: dict) -> None:
        self._write({"kind": "header", "version": TRACE_VERSION, "config": config})

    def write_candidate(self, record: dict) -> None:
        self._write({"kind": "candidate", **record})

    def write_step(self, record: dict) -> None:
        self._write({"kind": "step", **record})

    def _write(self, record: dict) -> None:
        self._fh.write(_dumps(record) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_trace(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def step_series(records: list[dict], name: str) -> list[tuple[int, float]]:
    """(iteration, value) pairs of one step-record field, sorted by iteration.

    Records whose field is null (e.g. loss on a skipped step) are omitted.
    """
    if name not in STEP_SERIES:
        raise KeyError(f"unknown series {name!r}; valid: {', '.join(STEP_SERIES)}")
    pairs = [
        (rec["iteration"], rec[name])
        for rec in records
        if rec.get("kind") == "step" and rec.get(name) is not None
    ]
    return sorted(pairs, key=lambda item: item[0])
