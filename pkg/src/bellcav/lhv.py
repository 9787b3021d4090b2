"""Finite hidden-variable models of Bell statistics.

Two descriptions are provided. The standard local model averages factorized
response functions over one joint distribution of hidden states. The
apparatus model lets each party's setting act on its own hidden state
through a stochastic kernel before the response functions are read, so the
joint distribution seen by the responses depends on (x, y).

:func:`reduce_apparatus_model` folds each kernel into the response function it
precedes. The folded model has the original joint distribution and produces
the same behavior table, so an apparatus model never escapes the local
polytope.

Array conventions (all hidden spaces are finite):

* response ``values[outcome, setting, state]``
* joint ``rho[alice_state, bob_state]``
* kernel ``t[state_out, state_in]``, column-stochastic
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .behavior import BehaviorTable
from .errors import ValidationError

ALGEBRAIC_TOL = 1e-12


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class HiddenSpace:
    cardinality: int

    def __post_init__(self) -> None:
        if int(self.cardinality) != self.cardinality or self.cardinality < 1:
            raise ValidationError(f"hidden space cardinality must be a positive integer, got {self.cardinality!r}")


@dataclass(frozen=True, eq=False)
class ResponseFunction:
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.ndim != 3 or v.shape[:2] != (2, 2) or v.shape[2] < 1:
            raise ValidationError(f"response values must have shape (2, 2, n), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("response values must be finite")
        if v.min() < -ALGEBRAIC_TOL or v.max() > 1 + ALGEBRAIC_TOL:
            raise ValidationError(
                f"response values must lie in [0, 1]; found [{v.min():.3g}, {v.max():.3g}]"
            )
        dev = np.abs(v.sum(axis=0) - 1.0).max()
        if dev > ALGEBRAIC_TOL:
            raise ValidationError(f"response outcomes must sum to 1 per (setting, state); deviation {dev:.3g}")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def space(self) -> HiddenSpace:
        return HiddenSpace(self.values.shape[2])

    @classmethod
    def deterministic(cls, outcome_map: Sequence[int], n_states: int = 1, state: int = 0) -> ResponseFunction:
        """Indicator response giving ``outcome_map[setting]`` with certainty.

        With ``n_states > 1`` the indicator applies at every state.
        """
        v = np.zeros((2, 2, n_states))
        for setting, outcome in enumerate(outcome_map):
            v[outcome, setting, :] = 1.0
        return cls(v)


@dataclass(frozen=True, eq=False)
class JointDistribution:
    rho: np.ndarray

    def __post_init__(self) -> None:
        r = np.array(self.rho, dtype=float)
        if r.ndim != 2 or 0 in r.shape:
            raise ValidationError(f"joint distribution must be a non-empty matrix, got shape {r.shape}")
        if not np.all(np.isfinite(r)) or r.min() < 0:
            raise ValidationError("joint distribution entries must be finite and non-negative")
        if abs(r.sum() - 1.0) > ALGEBRAIC_TOL:
            raise ValidationError(f"joint distribution mass is {r.sum()!r}, expected 1")
        object.__setattr__(self, "rho", _frozen(r))

    @classmethod
    def point_mass(cls, n_alice: int, n_bob: int, alice_state: int = 0, bob_state: int = 0) -> JointDistribution:
        r = np.zeros((n_alice, n_bob))
        r[alice_state, bob_state] = 1.0
        return cls(r)

    @classmethod
    def product(cls, alice: Sequence[float], bob: Sequence[float]) -> JointDistribution:
        return cls(np.outer(alice, bob))


@dataclass(frozen=True, eq=False)
class Kernel:
    t: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.t, dtype=float)
        if t.ndim != 2 or 0 in t.shape:
            raise ValidationError(f"kernel must be a non-empty matrix, got shape {t.shape}")
        if not np.all(np.isfinite(t)) or t.min() < -ALGEBRAIC_TOL or t.max() > 1 + ALGEBRAIC_TOL:
            raise ValidationError("kernel entries must lie in [0, 1]")
        dev = np.abs(t.sum(axis=0) - 1.0).max()
        if dev > ALGEBRAIC_TOL:
            raise ValidationError(f"kernel columns must sum to 1; deviation {dev:.3g}")
        object.__setattr__(self, "t", _frozen(t))

    @property
    def n_out(self) -> int:
        return self.t.shape[0]

    @property
    def n_in(self) -> int:
        return self.t.shape[1]

    @classmethod
    def identity(cls, n: int) -> Kernel:
        return cls(np.eye(n))

    @classmethod
    def collapse(cls, n: int, target: int) -> Kernel:
        """Send every input state to ``target``."""
        t = np.zeros((n, n))
        t[target, :] = 1.0
        return cls(t)

    @classmethod
    def permutation(cls, perm: Sequence[int]) -> Kernel:
        """Deterministic kernel mapping input state ``i`` to ``perm[i]``."""
        n = len(perm)
        t = np.zeros((n, n))
        t[list(perm), list(range(n))] = 1.0
        return cls(t)


@dataclass(frozen=True, eq=False)
class LhvModel:
    alice_response: ResponseFunction
    bob_response: ResponseFunction
    joint: JointDistribution

    def __post_init__(self) -> None:
        want = (self.alice_response.values.shape[2], self.bob_response.values.shape[2])
        if self.joint.rho.shape != want:
            raise ValidationError(
                f"joint distribution shape {self.joint.rho.shape} does not match hidden spaces {want}"
            )

    @property
    def alice_space(self) -> HiddenSpace:
        return self.alice_response.space

    @property
    def bob_space(self) -> HiddenSpace:
        return self.bob_response.space


@dataclass(frozen=True, eq=False)
class ApparatusModel:
    """Local model whose joint distribution is reshaped by per-setting kernels."""

    alice_response: ResponseFunction
    bob_response: ResponseFunction
    joint: JointDistribution
    alice_kernels: tuple[Kernel, Kernel]
    bob_kernels: tuple[Kernel, Kernel]

    def __post_init__(self) -> None:
        LhvModel(self.alice_response, self.bob_response, self.joint)
        for party, kernels, n in (
            ("alice", self.alice_kernels, self.alice_response.values.shape[2]),
            ("bob", self.bob_kernels, self.bob_response.values.shape[2]),
        ):
            kernels = tuple(kernels)
            if len(kernels) != 2:
                raise ValidationError(f"{party} needs exactly two kernels (one per setting)")
            for setting, k in enumerate(kernels):
                if k.t.shape != (n, n):
                    raise ValidationError(
                        f"{party} kernel for setting {setting} has shape {k.t.shape}, expected {(n, n)}"
                    )
            object.__setattr__(self, f"{party}_kernels", kernels)

    @property
    def base(self) -> LhvModel:
        return LhvModel(self.alice_response, self.bob_response, self.joint)

    def measurement_joint(self, x: int, y: int) -> JointDistribution:
        return product_kernel_joint(self.alice_kernels[x], self.bob_kernels[y], self.joint)


# ---------------------------------------------------------------------------
# Operations


def behavior_from_lhv(model: LhvModel) -> BehaviorTable:
    """p[a, b, x, y] = sum over (xi, eta) of rho * F[a, x, xi] * G[b, y, eta]."""
    p = np.einsum(
        "ij,axi,byj->abxy",
        model.joint.rho,
        model.alice_response.values,
        model.bob_response.values,
    )
    return BehaviorTable(p)


def apply_kernel(kernel: Kernel, dist: Sequence[float]) -> np.ndarray:
    d = np.asarray(dist, dtype=float)
    if d.shape != (kernel.n_in,):
        raise ValidationError(f"distribution has shape {d.shape}, kernel expects ({kernel.n_in},)")
    if d.min() < 0 or abs(d.sum() - 1.0) > ALGEBRAIC_TOL:
        raise ValidationError("input must be a probability distribution")
    return kernel.t @ d


def product_kernel_joint(t_alice: Kernel, t_bob: Kernel, joint: JointDistribution) -> JointDistribution:
    n_a, n_b = joint.rho.shape
    if t_alice.n_in != n_a or t_bob.n_in != n_b:
        raise ValidationError(
            f"kernel inputs ({t_alice.n_in}, {t_bob.n_in}) do not match joint shape {joint.rho.shape}"
        )
    return JointDistribution(t_alice.t @ joint.rho @ t_bob.t.T)


def tilded_response(response: ResponseFunction, kernels: Sequence[Kernel]) -> ResponseFunction:
    """Compose each setting's kernel into the response read after it."""
    kernels = tuple(kernels)
    n = response.values.shape[2]
    if len(kernels) != 2:
        raise ValidationError("need exactly two kernels (one per setting)")
    out = np.empty((2, 2, n))
    for setting, k in enumerate(kernels):
        if k.t.shape != (n, n):
            raise ValidationError(f"kernel for setting {setting} has shape {k.t.shape}, expected {(n, n)}")
        out[:, setting, :] = response.values[:, setting, :] @ k.t
    return ResponseFunction(out)


def apparatus_behavior_direct(model: ApparatusModel) -> BehaviorTable:
    f = model.alice_response.values
    g = model.bob_response.values
    p = np.empty((2, 2, 2, 2))
    for x, y in np.ndindex(2, 2):
        mu = model.measurement_joint(x, y).rho
        p[:, :, x, y] = np.einsum("ij,ai,bj->ab", mu, f[:, x, :], g[:, y, :])
    return BehaviorTable(p)


def reduce_apparatus_model(model: ApparatusModel) -> LhvModel:
    return LhvModel(
        tilded_response(model.alice_response, model.alice_kernels),
        tilded_response(model.bob_response, model.bob_kernels),
        model.joint,
    )


# ---------------------------------------------------------------------------
# Random model generation


def random_response(n: int, rng: np.random.Generator) -> ResponseFunction:
    v0 = rng.random((2, n))
    return ResponseFunction(np.stack([v0, 1.0 - v0]))


def random_joint(n_alice: int, n_bob: int, rng: np.random.Generator) -> JointDistribution:
    r = rng.dirichlet(np.ones(n_alice * n_bob)).reshape(n_alice, n_bob)
    return JointDistribution(r / r.sum())


def random_kernel(n: int, rng: np.random.Generator) -> Kernel:
    t = rng.dirichlet(np.ones(n), size=n).T
    return Kernel(t / t.sum(axis=0, keepdims=True))


def random_lhv_model(n_alice: int, n_bob: int, rng: np.random.Generator) -> LhvModel:
    return LhvModel(random_response(n_alice, rng), random_response(n_bob, rng), random_joint(n_alice, n_bob, rng))


def random_apparatus_model(n_alice: int, n_bob: int, rng: np.random.Generator) -> ApparatusModel:
    base = random_lhv_model(n_alice, n_bob, rng)
    return ApparatusModel(
        base.alice_response,
        base.bob_response,
        base.joint,
        (random_kernel(n_alice, rng), random_kernel(n_alice, rng)),
        (random_kernel(n_bob, rng), random_kernel(n_bob, rng)),
    )


# ---------------------------------------------------------------------------
# Serialization


def model_to_dict(model: LhvModel | ApparatusModel) -> dict[str, Any]:
    d: dict[str, Any] = {
        "type": "apparatus" if isinstance(model, ApparatusModel) else "lhv",
        "alice_response": model.alice_response.values.tolist(),
        "bob_response": model.bob_response.values.tolist(),
        "joint": model.joint.rho.tolist(),
    }
    if isinstance(model, ApparatusModel):
        d["alice_kernels"] = [k.t.tolist() for k in model.alice_kernels]
        d["bob_kernels"] = [k.t.tolist() for k in model.bob_kernels]
    return d


def model_from_dict(d: dict[str, Any]) -> LhvModel | ApparatusModel:
    try:
        parts = (
            ResponseFunction(d["alice_response"]),
            ResponseFunction(d["bob_response"]),
            JointDistribution(d["joint"]),
        )
        kind = d.get("type", "apparatus" if "alice_kernels" in d else "lhv")
        if kind == "lhv":
            return LhvModel(*parts)
        if kind == "apparatus":
            return ApparatusModel(
                *parts,
                tuple(Kernel(k) for k in d["alice_kernels"]),
                tuple(Kernel(k) for k in d["bob_kernels"]),
            )
    except KeyError as exc:
        raise ValidationError(f"model is missing field {exc.args[0]!r}") from None
    raise ValidationError(f"unknown model type {kind!r}")
