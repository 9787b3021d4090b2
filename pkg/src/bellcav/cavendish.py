"""Torsion-balance relay: outcome bit -> sphere orientation -> pointer bit.

Geometry (top view, rotation about the suspension axis):

* small balls of mass ``m`` sit at ``+/- L (cos theta, sin theta)`` on the beam;
* large spheres of mass ``M`` sit at ``+/- R (cos alpha, sin alpha)`` with
  ``R = L + d`` and ``alpha = +phi`` for bit 1, ``-phi`` for bit 0.

Only the attraction between each large sphere and its near small ball is
kept. The two near pairs contribute equal torque, so

    tau(theta) = 2 G M m L R sin(alpha - theta) / r**3,
    r**2 = L**2 + R**2 - 2 L R cos(alpha - theta).

The beam obeys I theta'' = -kappa theta - gamma theta' + tau, integrated with
fixed-step RK4 from rest. The pointer bit is the sign of the settled angle.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np

from .behavior import check_bit
from .errors import InconclusiveReadout, IntegrationError, ValidationError

DEAD_BAND = 1e-9  # rad
SUMMARY_POINTS = 11


@dataclass(frozen=True)
class CavendishConfig:
    big_mass: float
    small_mass: float
    beam_halflength: float
    sphere_offset_angle: float
    sphere_distance: float
    torsion_constant: float
    damping: float
    moment_of_inertia: float
    grav_constant: float
    relay_noise: float = 0.0
    # integration and readout controls
    dt: float = 0.005
    t_max: float = 4.0
    omega_tol: float = 1e-6
    settle_window: float = 0.2

    def __post_init__(self) -> None:
        for name in (
            "big_mass",
            "small_mass",
            "beam_halflength",
            "sphere_distance",
            "torsion_constant",
            "damping",
            "moment_of_inertia",
            "dt",
            "t_max",
            "omega_tol",
        ):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"cavendish.{name} must be a positive finite number, got {v!r}")
        if not (math.isfinite(self.grav_constant) and self.grav_constant >= 0):
            raise ValidationError(f"cavendish.grav_constant must be >= 0, got {self.grav_constant!r}")
        if not 0 < self.sphere_offset_angle < math.pi / 2:
            raise ValidationError(
                f"cavendish.sphere_offset_angle must lie in (0, pi/2), got {self.sphere_offset_angle!r}"
            )
        if not 0.0 <= self.relay_noise <= 0.5:
            raise ValidationError(f"cavendish.relay_noise must lie in [0, 0.5], got {self.relay_noise!r}")
        if not 0 < self.settle_window < 1:
            raise ValidationError("cavendish.settle_window must be a fraction in (0, 1)")
        if self.t_max < self.dt:
            raise ValidationError("cavendish.t_max must be at least one time step")
        if self.torsion_constant <= self.gravity_stiffness:
            raise ValidationError(
                f"torsion constant {self.torsion_constant:.3g} does not exceed the gravitational "
                f"stiffness {self.gravity_stiffness:.3g}; the balance would have several equilibria"
            )

    @property
    def sphere_radius(self) -> float:
        """Distance of the large-sphere centers from the axis."""
        return self.beam_halflength + self.sphere_distance

    @property
    def torque_scale(self) -> float:
        return 2.0 * self.grav_constant * self.big_mass * self.small_mass * self.beam_halflength * self.sphere_radius

    @property
    def gravity_stiffness(self) -> float:
        """Largest d(tau)/d(theta), reached when ball and sphere are aligned."""
        return self.torque_scale / self.sphere_distance**3

    @property
    def torque_bound(self) -> float:
        return 2.0 * self.grav_constant * self.big_mass * self.small_mass * self.beam_halflength / self.sphere_distance**2

    def with_noise(self, relay_noise: float) -> CavendishConfig:
        return replace(self, relay_noise=relay_noise)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CavendishConfig:
        d = dict(d)
        preset = d.pop("preset", "fast")
        if preset not in PRESETS:
            raise ValidationError(f"unknown cavendish preset {preset!r}; choose from {sorted(PRESETS)}")
        base = PRESETS[preset].to_dict()
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown cavendish fields: {sorted(unknown)}")
        base.update(d)
        try:
            return cls(**{k: float(v) for k, v in base.items()})
        except TypeError as exc:
            raise ValidationError(f"incomplete cavendish block: {exc}") from None


# Scaled units chosen so one relay settles in about a simulated second.
FAST = CavendishConfig(
    big_mass=1.0,
    small_mass=1.0,
    beam_halflength=1.0,
    sphere_offset_angle=0.3,
    sphere_distance=0.5,
    torsion_constant=100.0,
    damping=25.0,
    moment_of_inertia=1.0,
    grav_constant=1.0,
    dt=0.005,
    t_max=4.0,
    omega_tol=1e-6,
)

# Tabletop SI values in the range of the historical apparatus; overdamped.
PHYSICAL = CavendishConfig(
    big_mass=158.0,
    small_mass=0.73,
    beam_halflength=0.93,
    sphere_offset_angle=0.2,
    sphere_distance=0.225,
    torsion_constant=2.83e-4,
    damping=0.05,
    moment_of_inertia=2 * 0.73 * 0.93**2,
    grav_constant=6.674e-11,
    dt=1.0,
    t_max=4000.0,
    omega_tol=1e-11,
)

PRESETS = {"fast": FAST, "physical": PHYSICAL}


@dataclass(frozen=True)
class PendulumState:
    theta: float = 0.0
    omega: float = 0.0
    t: float = 0.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.theta, self.omega, self.t)):
            raise ValidationError("pendulum state must be finite")


def orientation_angle(config: CavendishConfig, orientation_bit: int) -> float:
    return config.sphere_offset_angle if check_bit("orientation_bit", orientation_bit) else -config.sphere_offset_angle


def gravity_torque(config: CavendishConfig, theta: float, orientation_bit: int) -> float:
    delta = orientation_angle(config, orientation_bit) - theta
    l, r_big = config.beam_halflength, config.sphere_radius
    r2 = l * l + r_big * r_big - 2.0 * l * r_big * math.cos(delta)
    return config.torque_scale * math.sin(delta) / (r2 * math.sqrt(r2))


@dataclass(frozen=True, eq=False)
class Trajectory:
    t: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    orientation_bit: int
    config: CavendishConfig = field(repr=False)

    @property
    def final(self) -> PendulumState:
        return PendulumState(float(self.theta[-1]), float(self.omega[-1]), float(self.t[-1]))

    @cached_property
    def settle_index(self) -> int:
        """First sample after which |omega| stays below the tolerance."""
        moving = np.flatnonzero(np.abs(self.omega) >= self.config.omega_tol)
        return 0 if moving.size == 0 else int(moving[-1]) + 1

    @property
    def settle_time(self) -> float:
        i = min(self.settle_index, len(self.t) - 1)
        return float(self.t[i])

    @property
    def settled(self) -> bool:
        window_start = int(math.floor(len(self.t) * (1.0 - self.config.settle_window)))
        return self.settle_index <= window_start

    @cached_property
    def summary(self) -> tuple[tuple[float, float], ...]:
        idx = np.unique(np.linspace(0, len(self.t) - 1, SUMMARY_POINTS).round().astype(int))
        return tuple((float(self.t[i]), float(self.theta[i])) for i in idx)

    def energy(self) -> np.ndarray:
        """Mechanical energy of the free oscillator (gravity excluded)."""
        c = self.config
        return 0.5 * c.moment_of_inertia * self.omega**2 + 0.5 * c.torsion_constant * self.theta**2

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "theta", "omega"])
            for row in zip(self.t, self.theta, self.omega):
                w.writerow([repr(float(v)) for v in row])


def integrate_pendulum(
    config: CavendishConfig,
    initial: PendulumState | None = None,
    orientation_bit: int = 0,
    dt: float | None = None,
    t_max: float | None = None,
    external_torque: float | None = None,
) -> Trajectory:
    """Fixed-step RK4 for I theta'' = -kappa theta - gamma theta' + tau.

    ``external_torque`` replaces the gravitational torque by a constant; it
    exists so the integrator can be checked against the static balance.
    """
    initial = initial or PendulumState()
    bit = check_bit("orientation_bit", orientation_bit)
    dt = config.dt if dt is None else float(dt)
    t_max = config.t_max if t_max is None else float(t_max)
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    if not t_max >= dt:
        raise ValidationError(f"t_max ({t_max}) must be at least dt ({dt})")

    inv_i = 1.0 / config.moment_of_inertia
    kappa, gamma = config.torsion_constant, config.damping

    if external_torque is None:
        def torque(theta: float) -> float:
            return gravity_torque(config, theta, bit)
    else:
        tau0 = float(external_torque)

        def torque(theta: float) -> float:
            return tau0

    def accel(theta: float, omega: float) -> float:
        return (-kappa * theta - gamma * omega + torque(theta)) * inv_i

    n = int(round(t_max / dt))
    ts = initial.t + dt * np.arange(n + 1)
    th = np.empty(n + 1)
    om = np.empty(n + 1)
    theta, omega = initial.theta, initial.omega
    th[0], om[0] = theta, omega
    half = 0.5 * dt
    for i in range(1, n + 1):
        k1t, k1w = omega, accel(theta, omega)
        k2t, k2w = omega + half * k1w, accel(theta + half * k1t, omega + half * k1w)
        k3t, k3w = omega + half * k2w, accel(theta + half * k2t, omega + half * k2w)
        k4t, k4w = omega + dt * k3w, accel(theta + dt * k3t, omega + dt * k3w)
        theta += dt / 6.0 * (k1t + 2 * k2t + 2 * k3t + k4t)
        omega += dt / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
        if not (math.isfinite(theta) and abs(theta) <= math.pi / 2):
            raise IntegrationError(
                f"beam angle left [-pi/2, pi/2] at t = {ts[i]:.6g} s (theta = {theta:.3g}); "
                f"reduce dt (currently {dt:.3g} s)"
            )
        th[i], om[i] = theta, omega
    return Trajectory(ts, th, om, bit, config)


@dataclass(frozen=True)
class RelayRecord:
    input_bit: int
    output_bit: int
    settle_time: float
    equilibrium_angle: float
    trajectory_summary: tuple[tuple[float, float], ...]
    flipped: bool = False


def pointer_bit(trajectory: Trajectory) -> int:
    """Sign readout of the settled angle; raises inside the dead band or if still moving."""
    if not trajectory.settled:
        raise InconclusiveReadout(
            f"pointer still moving: |omega| >= {trajectory.config.omega_tol:.3g} rad/s inside the "
            f"trailing {trajectory.config.settle_window:.0%} of the run (settle time {trajectory.settle_time:.4g} s)"
        )
    theta = float(trajectory.theta[-1])
    if abs(theta) <= DEAD_BAND:
        raise InconclusiveReadout(f"settled angle {theta:.3g} rad lies inside the {DEAD_BAND:g} rad dead band")
    return 1 if theta > 0 else 0


def readout(trajectory: Trajectory, config: CavendishConfig, rng: np.random.Generator) -> RelayRecord:
    """Read the pointer bit, then flip it with probability ``config.relay_noise``.

    One uniform is always drawn so the stream position does not depend on
    the noise level.
    """
    bit = pointer_bit(trajectory)
    flip = bool(rng.random() < config.relay_noise)
    return RelayRecord(
        input_bit=trajectory.orientation_bit,
        output_bit=bit ^ flip,
        settle_time=trajectory.settle_time,
        equilibrium_angle=float(trajectory.theta[-1]),
        trajectory_summary=trajectory.summary,
        flipped=flip,
    )


def relay(config: CavendishConfig, orientation_bit: int, rng: np.random.Generator) -> RelayRecord:
    return readout(integrate_pendulum(config, orientation_bit=orientation_bit), config, rng)
