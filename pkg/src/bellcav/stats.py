"""Finite-sample estimates of behavior tables and CHSH significance."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .behavior import BehaviorTable, check_bit
from .errors import ValidationError

QUANTUM = "quantum"
MACRO = "macro"
LAYERS = (QUANTUM, MACRO)

LEDGER_FIELDS = ("trial_id", "x", "y", "a", "b", "a_macro", "b_macro", "seed")


@dataclass(frozen=True, slots=True)
class TrialRecord:
    trial_id: int
    x: int
    y: int
    a: int
    b: int
    a_macro: int
    b_macro: int
    seed: int

    def __post_init__(self) -> None:
        for name in ("x", "y", "a", "b", "a_macro", "b_macro"):
            check_bit(name, getattr(self, name))

    def to_row(self) -> list[int]:
        return [getattr(self, f) for f in LEDGER_FIELDS]

    @classmethod
    def from_row(cls, row: Iterable[Any]) -> TrialRecord:
        return cls(*(int(v) for v in row))


@dataclass(frozen=True, eq=False)
class EstimatedBehavior:
    table: BehaviorTable
    counts: np.ndarray  # [a, b, x, y]
    stderr: np.ndarray  # [a, b, x, y]

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=(0, 1))

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> EstimatedBehavior:
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (2, 2, 2, 2) or counts.min() < 0:
            raise ValidationError("counts must be a non-negative (2, 2, 2, 2) integer array")
        totals = counts.sum(axis=(0, 1))
        for x, y in np.ndindex(2, 2):
            if totals[x, y] == 0:
                raise ValidationError(f"no records for setting cell (x={x}, y={y})")
        p = counts / totals
        stderr = np.sqrt(p * (1.0 - p) / totals)
        return cls(BehaviorTable(p, signaling_tol=None), counts, stderr)

    def to_dict(self) -> dict[str, Any]:
        return {"counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> EstimatedBehavior:
        return cls.from_counts(np.asarray(d["counts"]))


def count_table(records: Iterable[TrialRecord], layer: str = QUANTUM) -> np.ndarray:
    if layer not in LAYERS:
        raise ValidationError(f"layer must be one of {LAYERS}, got {layer!r}")
    records = list(records)
    counts = np.zeros((2, 2, 2, 2), dtype=np.int64)
    if not records:
        return counts
    if layer == QUANTUM:
        cols = [(r.a, r.b, r.x, r.y) for r in records]
    else:
        cols = [(r.a_macro, r.b_macro, r.x, r.y) for r in records]
    idx = np.asarray(cols, dtype=np.intp).T
    np.add.at(counts, tuple(idx), 1)
    return counts


def estimate_behavior(records: Iterable[TrialRecord], layer: str = QUANTUM) -> EstimatedBehavior:
    return EstimatedBehavior.from_counts(count_table(records, layer))


@dataclass(frozen=True)
class ChshSignificance:
    s_hat: float
    sigma: float
    z: float

    def to_dict(self) -> dict[str, float]:
        return {"s_hat": self.s_hat, "sigma": self.sigma, "z": self.z}


CHSH_SIGNS = np.array([[1.0, 1.0], [1.0, -1.0]])


def correlator_estimates(est: EstimatedBehavior) -> tuple[np.ndarray, np.ndarray]:
    """Correlators E(x, y) and their standard errors sqrt((1 - E^2) / n_xy)."""
    totals = est.totals
    if np.any(totals == 0):
        raise ValidationError("CHSH needs at least one record per setting cell")
    e = est.table.correlators()
    var = np.clip(1.0 - e**2, 0.0, None) / totals
    return e, np.sqrt(var)


def chsh_significance(est: EstimatedBehavior) -> ChshSignificance:
    """Normal-approximation test of |S| against the local bound 2.

    The four correlators come from disjoint sets of trials, so their
    variances add.
    """
    e, se = correlator_estimates(est)
    s_hat = float(np.sum(CHSH_SIGNS * e))
    sigma = float(math.sqrt(np.sum(se**2)))
    excess = abs(s_hat) - 2.0
    if sigma > 0:
        z = excess / sigma
    elif abs(excess) <= 1e-12:
        z = 0.0
    else:
        z = math.copysign(math.inf, excess)
    return ChshSignificance(s_hat, sigma, z)


def write_results_csv(
    path: str | Path,
    estimates: Mapping[str, EstimatedBehavior],
    significances: Mapping[str, ChshSignificance],
) -> None:
    """One row per layer and cell, then correlator and CHSH rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "quantity", "a", "b", "x", "y", "count", "estimate", "stderr"])
        for layer, est in estimates.items():
            for a, b, x, y in np.ndindex(2, 2, 2, 2):
                w.writerow([
                    layer, "p", a, b, x, y,
                    int(est.counts[a, b, x, y]),
                    repr(float(est.table.p[a, b, x, y])),
                    repr(float(est.stderr[a, b, x, y])),
                ])
            e, se = correlator_estimates(est)
            for x, y in np.ndindex(2, 2):
                w.writerow([layer, "E", "", "", x, y, int(est.totals[x, y]), repr(float(e[x, y])), repr(float(se[x, y]))])
            sig = significances[layer]
            w.writerow([layer, "S", "", "", "", "", est.n, repr(sig.s_hat), repr(sig.sigma)])
            w.writerow([layer, "z", "", "", "", "", est.n, repr(sig.z), ""])
