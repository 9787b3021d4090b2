"""Local-polytope membership for 2-2-2 behaviors and the CHSH functional."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any

import numpy as np
from scipy.optimize import linprog, nnls

from .behavior import BehaviorTable
from .errors import LPSolverError, ValidationError
from .lhv import JointDistribution, LhvModel, ResponseFunction, behavior_from_lhv

DEFAULT_TOL = 1e-7

LOCAL = "local"
NONLOCAL = "nonlocal"

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


@dataclass(frozen=True)
class DeterministicStrategy:
    alice_map: tuple[int, int]
    bob_map: tuple[int, int]

    def as_lhv_model(self) -> LhvModel:
        return LhvModel(
            ResponseFunction.deterministic(self.alice_map),
            ResponseFunction.deterministic(self.bob_map),
            JointDistribution.point_mass(1, 1),
        )

    def label(self) -> str:
        return "A{}{}B{}{}".format(*self.alice_map, *self.bob_map)


def all_strategies() -> list[DeterministicStrategy]:
    return [
        DeterministicStrategy((a0, a1), (b0, b1))
        for a0, a1, b0, b1 in itertools.product((0, 1), repeat=4)
    ]


def enumerate_deterministic_vertices() -> list[BehaviorTable]:
    return [behavior_from_lhv(s.as_lhv_model()) for s in all_strategies()]


@lru_cache(maxsize=1)
def _vertex_matrix() -> np.ndarray:
    """16 x 16 matrix whose columns are the flattened vertices."""
    v = np.stack([t.vector() for t in enumerate_deterministic_vertices()], axis=1)
    v.setflags(write=False)
    return v


def chsh_value(behavior: BehaviorTable) -> float:
    """S = E(0,0) + E(0,1) + E(1,0) - E(1,1)."""
    if not isinstance(behavior, BehaviorTable):
        raise ValidationError(f"expected a BehaviorTable, got {type(behavior).__name__}")
    e = behavior.correlators()
    return float(e[0, 0] + e[0, 1] + e[1, 0] - e[1, 1])


@dataclass(frozen=True)
class LocalityCertificate:
    verdict: str
    distance: float
    chsh_value: float
    tol: float
    weights: tuple[float, ...] | None = field(default=None)

    def __post_init__(self) -> None:
        if self.verdict not in (LOCAL, NONLOCAL):
            raise ValidationError(f"unknown verdict {self.verdict!r}")
        if (self.verdict == LOCAL) != (self.weights is not None):
            raise ValidationError("weights must be present exactly when the verdict is local")

    @property
    def is_local(self) -> bool:
        return self.verdict == LOCAL

    def reconstruct(self) -> BehaviorTable:
        if self.weights is None:
            raise ValidationError("nonlocal certificate has no mixture to reconstruct")
        return BehaviorTable((_vertex_matrix() @ np.asarray(self.weights)).reshape(2, 2, 2, 2))

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict,
            "distance": self.distance,
            "chsh_value": self.chsh_value,
            "tol": self.tol,
            "weights": None if self.weights is None else list(self.weights),
            "strategies": [s.label() for s in all_strategies()],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> LocalityCertificate:
        w = d.get("weights")
        return cls(
            verdict=d["verdict"],
            distance=float(d["distance"]),
            chsh_value=float(d["chsh_value"]),
            tol=float(d["tol"]),
            weights=None if w is None else tuple(float(v) for v in w),
        )


def _residual(weights: np.ndarray, target: np.ndarray) -> float:
    return float(np.max(np.abs(_vertex_matrix() @ weights - target)))


def _normalize(w: np.ndarray) -> np.ndarray:
    w = np.clip(w, 0.0, None)
    return w / w.sum()


def _polish(target: np.ndarray, lp_weights: np.ndarray) -> np.ndarray:
    """Best of the LP mixture and a sum-constrained NNLS refit."""
    v = _vertex_matrix()
    # Heavy last row pins the weights to the simplex.
    a = np.vstack([v, 1e3 * np.ones((1, 16))])
    b = np.concatenate([target, [1e3]])
    nn, _ = nnls(a, b, maxiter=2000)
    candidates = [_normalize(lp_weights)]
    if nn.sum() > 0:
        candidates.append(_normalize(nn))
    return min(candidates, key=lambda w: _residual(w, target))


def local_membership(behavior: BehaviorTable, tol: float = DEFAULT_TOL) -> LocalityCertificate:
    """Decide whether ``behavior`` is a mixture of deterministic strategies.

    Solves min t subject to |V w - P| <= t entrywise, w >= 0, sum w = 1.
    """
    if not isinstance(behavior, BehaviorTable):
        raise ValidationError(f"expected a BehaviorTable, got {type(behavior).__name__}")
    if not tol > 0:
        raise ValidationError(f"tolerance must be positive, got {tol}")
    target = behavior.vector()
    v = _vertex_matrix()
    n = v.shape[1]
    c = np.zeros(n + 1)
    c[-1] = 1.0
    ones = np.ones((16, 1))
    a_ub = np.vstack([np.hstack([v, -ones]), np.hstack([-v, -ones])])
    b_ub = np.concatenate([target, -target])
    a_eq = np.hstack([np.ones((1, n)), np.zeros((1, 1))])
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=[1.0],
        bounds=[(0, None)] * (n + 1),
        method="highs",
        options=_HIGHS_OPTIONS,
    )
    if res.status != 0 or res.x is None:
        raise LPSolverError(f"LP solver failed (status {res.status}): {res.message}")
    lp_distance = max(float(res.x[-1]), 0.0)
    s = chsh_value(behavior)
    if lp_distance <= tol:
        w = _polish(target, res.x[:n])
        dist = _residual(w, target)
        if dist <= tol:
            return LocalityCertificate(LOCAL, dist, s, tol, tuple(float(x) for x in w))
        lp_distance = max(lp_distance, dist)
    return LocalityCertificate(NONLOCAL, lp_distance, s, tol)


@lru_cache(maxsize=1)
def _affine_hull() -> tuple[np.ndarray, np.ndarray]:
    v = _vertex_matrix()
    origin = v[:, 0].copy()
    diffs = v[:, 1:] - origin[:, None]
    u, sing, _ = np.linalg.svd(diffs, full_matrices=False)
    basis = u[:, sing > 1e-9 * sing.max()]
    return origin, basis


def nearest_no_signaling(p: np.ndarray | BehaviorTable) -> BehaviorTable:
    """Orthogonal projection onto the affine span of the deterministic vertices.

    That span is the normalized no-signaling subspace. Finite-sample estimates
    carry statistical signaling and are projected before the membership LP.
    """
    arr = p.p if isinstance(p, BehaviorTable) else np.asarray(p, dtype=float)
    vec = arr.reshape(16)
    origin, basis = _affine_hull()
    proj = origin + basis @ (basis.T @ (vec - origin))
    proj = proj.reshape(2, 2, 2, 2)
    # A projected estimate can dip a hair below zero near the polytope boundary.
    if proj.min() < 0:
        proj = np.clip(proj, 0.0, None)
        proj = proj / proj.sum(axis=(0, 1), keepdims=True)
        return BehaviorTable(proj, signaling_tol=None)
    return BehaviorTable(proj)
