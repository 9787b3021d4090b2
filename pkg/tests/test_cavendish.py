import math
from dataclasses import replace

import numpy as np
import pytest

from bellcav.cavendish import (
    DEAD_BAND,
    FAST,
    PHYSICAL,
    CavendishConfig,
    PendulumState,
    gravity_torque,
    integrate_pendulum,
    pointer_bit,
    readout,
    relay,
)
from bellcav.errors import InconclusiveReadout, IntegrationError, ValidationError

from oracles import bisect, torque_vectors


def _vec_torque(cfg, theta, bit):
    return torque_vectors(
        cfg.grav_constant, cfg.big_mass, cfg.small_mass, cfg.beam_halflength,
        cfg.sphere_distance, cfg.sphere_offset_angle, theta, bit,
    )


# -- torque ------------------------------------------------------------------


@pytest.mark.parametrize("cfg", [FAST, PHYSICAL], ids=["fast", "physical"])
def test_torque_antisymmetric_at_zero(cfg):
    t0, t1 = gravity_torque(cfg, 0.0, 0), gravity_torque(cfg, 0.0, 1)
    assert t1 > 0
    assert t0 == -t1


def test_zero_gravity_zero_torque():
    cfg = replace(FAST, grav_constant=0.0)
    for theta in np.linspace(-0.5, 0.5, 11):
        assert gravity_torque(cfg, theta, 0) == 0.0 == gravity_torque(cfg, theta, 1)


def test_default_torque_matches_vector_geometry():
    # frozen from the 3-vector oracle
    assert gravity_torque(FAST, 0.0, 1) == pytest.approx(3.725869686396466, rel=1e-12)
    for cfg in (FAST, PHYSICAL):
        for theta in np.linspace(-0.4, 0.4, 9):
            for bit in (0, 1):
                assert gravity_torque(cfg, theta, bit) == pytest.approx(_vec_torque(cfg, theta, bit), rel=1e-12, abs=1e-12 * cfg.torque_bound)


@pytest.mark.parametrize("cfg", [FAST, PHYSICAL], ids=["fast", "physical"])
def test_torque_bounded_and_smooth(cfg):
    thetas = np.linspace(-1.5, 1.5, 3001)
    tau = np.array([gravity_torque(cfg, th, 1) for th in thetas])
    assert np.abs(tau).max() <= cfg.torque_bound
    # finite-difference slope never exceeds the stiffness used in validation
    slope = np.diff(tau) / np.diff(thetas)
    assert np.abs(slope).max() <= cfg.gravity_stiffness * (1 + 1e-3)


def test_coincident_spheres_rejected():
    with pytest.raises(ValidationError):
        replace(FAST, sphere_distance=0.0)


def test_soft_fibre_rejected():
    with pytest.raises(ValidationError, match="equilibria"):
        replace(FAST, torsion_constant=10.0)


@pytest.mark.parametrize(
    "field, value",
    [("big_mass", -1.0), ("sphere_offset_angle", 2.0), ("relay_noise", 0.7), ("dt", 0.0), ("grav_constant", -1.0)],
)
def test_config_validation(field, value):
    with pytest.raises(ValidationError):
        replace(FAST, **{field: value})


def test_config_dict_round_trip_and_presets():
    assert CavendishConfig.from_dict(FAST.to_dict()) == FAST
    assert CavendishConfig.from_dict({"preset": "physical"}) == PHYSICAL
    assert CavendishConfig.from_dict({"damping": 30.0}) == replace(FAST, damping=30.0)
    with pytest.raises(ValidationError):
        CavendishConfig.from_dict({"preset": "nope"})
    with pytest.raises(ValidationError):
        CavendishConfig.from_dict({"colour": "red"})


# -- integration -------------------------------------------------------------


def test_free_damped_oscillation_decays():
    # Underdamped, no gravity: envelope and per-period energy must shrink.
    cfg = replace(FAST, grav_constant=0.0, damping=1.0)
    traj = integrate_pendulum(cfg, PendulumState(theta=0.1), dt=0.001, t_max=5.0)
    energy = traj.energy()
    period = 2 * math.pi / math.sqrt(cfg.torsion_constant / cfg.moment_of_inertia)
    step = int(round(period / 0.001))
    windows = [energy[i:i + step].max() for i in range(0, len(energy) - step, step)]
    assert all(b < a for a, b in zip(windows, windows[1:]))
    assert np.all(np.diff(energy) <= 1e-15)
    assert abs(traj.theta[-1]) < 0.1 * math.exp(-0.5 * 4.5)


def test_constant_torque_static_balance():
    cfg = replace(FAST, grav_constant=0.0)
    tau0 = 1.7
    traj = integrate_pendulum(cfg, external_torque=tau0)
    assert traj.theta[-1] == pytest.approx(tau0 / cfg.torsion_constant, rel=1e-3)


@pytest.mark.parametrize("cfg", [FAST, PHYSICAL], ids=["fast", "physical"])
@pytest.mark.parametrize("bit", [0, 1])
def test_gravitational_equilibrium_matches_bisection(cfg, bit):
    sign = 1 if bit else -1

    def static(theta):
        return cfg.torsion_constant * theta - _vec_torque(cfg, theta, bit)

    root = bisect(static, 0.0, sign * cfg.sphere_offset_angle)
    traj = integrate_pendulum(cfg, orientation_bit=bit)
    assert traj.theta[-1] == pytest.approx(root, rel=1e-3)


def test_unstable_step_reports_dt():
    cfg = replace(FAST, grav_constant=0.0, damping=1.0)
    with pytest.raises(IntegrationError, match="reduce dt"):
        integrate_pendulum(cfg, PendulumState(theta=0.1), dt=0.5, t_max=50.0)


def test_bad_step_arguments():
    with pytest.raises(ValidationError):
        integrate_pendulum(FAST, dt=-1.0)
    with pytest.raises(ValidationError):
        integrate_pendulum(FAST, dt=0.1, t_max=0.01)


def test_non_finite_state_rejected():
    with pytest.raises(ValidationError):
        PendulumState(theta=math.inf)


# -- readout -----------------------------------------------------------------


@pytest.mark.parametrize("cfg", [FAST, PHYSICAL], ids=["fast", "physical"])
def test_faithful_relay(cfg, rng):
    for bit in (0, 1):
        rec = relay(cfg, bit, rng)
        assert rec.output_bit == rec.input_bit == bit
        assert rec.settle_time <= cfg.t_max
        assert len(rec.trajectory_summary) == 11


@pytest.mark.parametrize("eps, expected", [(0.5, 0.5), (0.1, 0.1)])
def test_noise_flip_frequency(eps, expected):
    cfg = FAST.with_noise(eps)
    trajs = {b: integrate_pendulum(cfg, orientation_bit=b) for b in (0, 1)}
    r = np.random.default_rng(2024)
    n = 10_000
    flips = ones = 0
    for i in range(n):
        bit = i % 2
        rec = readout(trajs[bit], cfg, r)
        flips += rec.output_bit != bit
        ones += rec.output_bit
    sigma = math.sqrt(expected * (1 - expected) / n)
    assert abs(flips / n - expected) < 5 * sigma
    if eps == 0.5:
        assert abs(ones / n - 0.5) < 5 * sigma


def test_relay_deterministic_given_seed():
    cfg = FAST.with_noise(0.25)
    recs = [relay(cfg, 1, np.random.default_rng(5)) for _ in range(2)]
    assert recs[0] == recs[1]


def test_dead_band_is_inconclusive(rng):
    cfg = replace(FAST, grav_constant=0.0)
    traj = integrate_pendulum(cfg, orientation_bit=1)
    assert abs(traj.theta[-1]) <= DEAD_BAND
    with pytest.raises(InconclusiveReadout, match="dead band"):
        readout(traj, cfg, rng)


def test_unsettled_is_inconclusive(rng):
    cfg = replace(FAST, t_max=0.2)
    traj = integrate_pendulum(cfg, orientation_bit=1)
    assert not traj.settled
    with pytest.raises(InconclusiveReadout, match="still moving"):
        pointer_bit(traj)


def test_trajectory_csv(tmp_path):
    traj = integrate_pendulum(FAST, orientation_bit=0)
    path = tmp_path / "traj.csv"
    traj.write_csv(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (len(traj.t), 3)
    np.testing.assert_array_equal(data[:, 1], traj.theta)
