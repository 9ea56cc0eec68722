"""Sampled solver output and its CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError

SSD_HEADER = ("t_us", "bound", "c_at_a", "solute_mass")
AGGREGATE_HEADER = ("t_us", "bound_mean", "bound_se")


def _fmt(v):
    return "%.17g" % v


@dataclass
class TimeSeries:
    times: np.ndarray
    bound: np.ndarray
    c_at_a: np.ndarray
    solute_mass: np.ndarray
    metadata: dict = field(default_factory=dict)
    bound_se: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        n = len(self.times)
        for name in ("bound", "c_at_a", "solute_mass"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
            setattr(self, name, arr)
        if self.bound_se is not None:
            self.bound_se = np.asarray(self.bound_se, dtype=float)
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def solver(self):
        return self.metadata.get("solver")

    def peak(self):
        """``(time, value)`` of the maximum bound count."""
        k = int(np.argmax(self.bound))
        return float(self.times[k]), float(self.bound[k])

    def value_at(self, t):
        return float(np.interp(t, self.times, self.bound))

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if self.bound_se is not None:
            w.writerow(AGGREGATE_HEADER)
            for row in zip(self.times, self.bound, self.bound_se):
                w.writerow([_fmt(v) for v in row])
        else:
            w.writerow(SSD_HEADER)
            for row in zip(self.times, self.bound, self.c_at_a, self.solute_mass):
                w.writerow([_fmt(v) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ParseError(f"{path}: empty CSV")
        header, body = tuple(rows[0]), rows[1:]
        try:
            data = np.array(body, dtype=float).reshape(len(body), len(header))
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from None
        col = {name: data[:, i] for i, name in enumerate(header)}
        if "t_us" not in col:
            raise ParseError(f"{path}: no t_us column")
        nan = np.full(len(body), np.nan)
        if "bound" in col:
            bound, se = col["bound"], None
        elif "bound_mean" in col:
            bound, se = col["bound_mean"], col.get("bound_se")
        else:
            raise ParseError(f"{path}: no bound or bound_mean column")
        return cls(
            col["t_us"],
            bound,
            col.get("c_at_a", nan),
            col.get("solute_mass", nan),
            {"source": str(path)},
            se,
        )
