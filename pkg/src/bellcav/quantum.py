"""Two-qubit states, equatorial projective measurements and the Born-rule behavior."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .behavior import BehaviorTable, check_bit
from .errors import ValidationError

TWO_PI = 2.0 * math.pi

_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_I2 = np.eye(2, dtype=complex)


@dataclass(frozen=True, eq=False)
class TwoQubitState:
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (4, 4):
            raise ValidationError(f"state must be a 4x4 density matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValidationError("state has non-finite entries")
        if np.max(np.abs(m - m.conj().T)) > 1e-12:
            raise ValidationError("state is not Hermitian (tolerance 1e-12)")
        tr = np.trace(m)
        if abs(tr - 1.0) > 1e-12:
            raise ValidationError(f"state trace is {tr.real:.15g}, expected 1 (tolerance 1e-12)")
        lam = np.linalg.eigvalsh(m)
        if lam.min() < -1e-10:
            raise ValidationError(
                f"state is not positive semidefinite: smallest eigenvalue {lam.min():.3g}"
            )
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_vector(cls, psi) -> TwoQubitState:
        v = np.asarray(psi, dtype=complex)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    @classmethod
    def singlet(cls) -> TwoQubitState:
        return cls.from_vector([0, 1, -1, 0])

    @classmethod
    def maximally_mixed(cls) -> TwoQubitState:
        return cls(np.eye(4) / 4)

    @classmethod
    def werner(cls, visibility: float) -> TwoQubitState:
        """Singlet mixed with white noise: v |psi-><psi-| + (1 - v) I/4."""
        if not 0.0 <= visibility <= 1.0:
            raise ValidationError(f"visibility must lie in [0, 1], got {visibility}")
        return cls(visibility * cls.singlet().matrix + (1 - visibility) * np.eye(4) / 4)


@dataclass(frozen=True)
class MeasurementSettings:
    """Equatorial measurement directions, one angle per setting."""

    alice_angles: tuple[float, float] = (0.0, math.pi / 2)
    bob_angles: tuple[float, float] = (math.pi / 4, -math.pi / 4)

    def __post_init__(self) -> None:
        for name in ("alice_angles", "bob_angles"):
            raw = tuple(float(v) for v in getattr(self, name))
            if len(raw) != 2 or not all(math.isfinite(v) for v in raw):
                raise ValidationError(f"{name} must be two finite angles, got {raw!r}")
            object.__setattr__(self, name, tuple(v % TWO_PI for v in raw))


def projector(angle: float, outcome: int) -> np.ndarray:
    """Projector onto outcome ``(-1)**outcome`` of cos(angle) X + sin(angle) Y."""
    n_sigma = math.cos(angle) * _SX + math.sin(angle) * _SY
    return (_I2 + (1 - 2 * outcome) * n_sigma) / 2


def behavior_from_state(state: TwoQubitState, settings: MeasurementSettings) -> BehaviorTable:
    rho = state.matrix
    p = np.empty((2, 2, 2, 2))
    for a, b, x, y in np.ndindex(2, 2, 2, 2):
        op = np.kron(projector(settings.alice_angles[x], a), projector(settings.bob_angles[y], b))
        val = np.trace(rho @ op)
        if abs(val.imag) >= 1e-10:
            raise ValidationError(
                f"Born probability for (a={a}, b={b}, x={x}, y={y}) has imaginary part {val.imag:.3g}"
            )
        p[a, b, x, y] = val.real
    # Round-off can leave entries at -1e-17.
    return BehaviorTable(np.clip(p, 0.0, 1.0))


def sample_outcomes(
    behavior: BehaviorTable, x: int, y: int, rng: np.random.Generator
) -> tuple[int, int]:
    """Draw one (a, b) pair from the categorical distribution p[., ., x, y]."""
    x = check_bit("x", x)
    y = check_bit("y", y)
    cell = behavior.p[:, :, x, y].reshape(4)
    k = int(np.searchsorted(np.cumsum(cell), rng.random(), side="right"))
    if k > 3 or cell[k] == 0.0:
        # u landed past the rounded cumulative total; fall back to the last live cell.
        k = int(np.flatnonzero(cell)[-1])
    return k >> 1, k & 1
