"""The 2-party, 2-setting, 2-outcome behavior table P(a, b | x, y)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ValidationError

NORMALIZATION_TOL = 1e-9
SIGNALING_TOL = 1e-9
_RANGE_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class BehaviorTable:
    """Conditional probabilities indexed ``p[a, b, x, y]``.

    ``signaling_tol=None`` skips the no-signaling check; this is only meant for
    tables estimated from finite samples, which carry statistical signaling.
    """

    p: np.ndarray
    signaling_tol: float | None = SIGNALING_TOL

    def __post_init__(self) -> None:
        arr = np.array(self.p, dtype=float)
        if arr.shape != (2, 2, 2, 2):
            raise ValidationError(f"behavior table must have shape (2, 2, 2, 2), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("behavior table contains NaN or infinite entries")
        if arr.min() < -_RANGE_SLACK or arr.max() > 1 + _RANGE_SLACK:
            raise ValidationError(
                f"behavior entries must lie in [0, 1]; found range [{arr.min():.3g}, {arr.max():.3g}]"
            )
        sums = arr.sum(axis=(0, 1))
        bad = np.abs(sums - 1.0)
        if bad.max() > NORMALIZATION_TOL:
            x, y = np.unravel_index(int(np.argmax(bad)), bad.shape)
            raise ValidationError(
                f"normalization violated at (x={x}, y={y}): sum = {sums[x, y]!r}"
            )
        if self.signaling_tol is not None:
            gap = _signaling_gap(arr)
            if gap > self.signaling_tol:
                raise ValidationError(
                    f"no-signaling violated: marginal gap {gap:.3g} > {self.signaling_tol:.3g}"
                )
        arr.setflags(write=False)
        object.__setattr__(self, "p", arr)

    def correlator(self, x: int, y: int) -> float:
        cell = self.p[:, :, x, y]
        return float(cell[0, 0] + cell[1, 1] - cell[0, 1] - cell[1, 0])

    def correlators(self) -> np.ndarray:
        return np.array([[self.correlator(x, y) for y in (0, 1)] for x in (0, 1)])

    def signaling_gap(self) -> float:
        return _signaling_gap(self.p)

    def vector(self) -> np.ndarray:
        return self.p.reshape(16).copy()

    def max_abs_diff(self, other: BehaviorTable) -> float:
        return float(np.max(np.abs(self.p - other.p)))

    def to_list(self) -> list[Any]:
        return self.p.tolist()

    @classmethod
    def from_list(cls, data: Any, signaling_tol: float | None = SIGNALING_TOL) -> BehaviorTable:
        return cls(np.asarray(data, dtype=float), signaling_tol=signaling_tol)

    @classmethod
    def uniform(cls) -> BehaviorTable:
        return cls(np.full((2, 2, 2, 2), 0.25))

    @classmethod
    def pr_box(cls) -> BehaviorTable:
        p = np.zeros((2, 2, 2, 2))
        for a, b, x, y in np.ndindex(2, 2, 2, 2):
            if a ^ b == x & y:
                p[a, b, x, y] = 0.5
        return cls(p)


def _signaling_gap(p: np.ndarray) -> float:
    alice = p.sum(axis=1)  # [a, x, y]
    bob = p.sum(axis=0)  # [b, x, y]
    gap_a = np.abs(alice[:, :, 0] - alice[:, :, 1]).max()
    gap_b = np.abs(bob[:, 0, :] - bob[:, 1, :]).max()
    return float(max(gap_a, gap_b))


def check_bit(name: str, v: Any) -> int:
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)) and int(v) in (0, 1):
        return int(v)
    if isinstance(v, float) and not math.isnan(v) and v in (0.0, 1.0):
        return int(v)
    raise ValidationError(f"{name} must be a bit (0 or 1), got {v!r}")
