"""Regret traces and locale-free CSV emission."""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        if any(c in v for c in ',"\n'):
            raise ValueError(f"label {v!r} needs CSV quoting")
        return v
    return format(float(v), ".17g")


def write_csv(header, rows, fh):
    fh.write(",".join(header) + "\n")
    for row in rows:
        fh.write(",".join(fmt(v) for v in row) + "\n")


def csv_text(header, rows):
    buf = io.StringIO()
    write_csv(header, rows, buf)
    return buf.getvalue()


@dataclass
class RegretTrace:
    """Per-step record of one seeded run.

    ``columns`` is ordered and its first entry is the step index; the seed is
    prepended when rows are emitted.
    """

    seed: int
    columns: dict
    cumulative_key: str
    fingerprint: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError(f"ragged trace columns: {sorted(lengths)}")
        steps = self.steps
        if len(steps) > 1 and not np.all(np.diff(steps) > 0):
            raise ValueError("trace steps must be strictly increasing")

    @property
    def step_key(self):
        return next(iter(self.columns))

    @property
    def steps(self):
        return np.asarray(self.columns[self.step_key])

    @property
    def cumulative(self):
        return np.asarray(self.columns[self.cumulative_key], dtype=float)

    def __len__(self):
        return len(self.steps)

    @property
    def header(self):
        return ["seed", *self.columns]

    def rows(self):
        cols = list(self.columns.values())
        for i in range(len(self)):
            yield (self.seed, *(c[i] for c in cols))

    def summary(self):
        """Final cumulative regret and the mean per-step regret in each quartile."""
        cum = self.cumulative
        if len(cum) == 0:
            return {"final": 0.0, "quartile_means": [0.0] * 4}
        inc = np.diff(np.concatenate([[0.0], cum]))
        parts = np.array_split(inc, 4)
        return {
            "final": float(cum[-1]),
            "quartile_means": [float(p.mean()) if len(p) else 0.0 for p in parts],
        }

    def to_csv(self, with_header=True):
        buf = io.StringIO()
        if with_header:
            buf.write(",".join(self.header) + "\n")
        for row in self.rows():
            buf.write(",".join(fmt(v) for v in row) + "\n")
        return buf.getvalue()
