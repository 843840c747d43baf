import dataclasses

import numpy as np
import pytest

from conftest import bench, scenario
from zdshield.errors import AttackHadNoEffect
from zdshield.config import ScenarioConfig, load_preset, set_path
from zdshield.harness import run_scenario
from zdshield.plant import four_tank_actual, four_tank_nominal, solve_operating_point
from zdshield.recovery import (RecoveryState, apply_recovery, gamma_index, initial_weights, recovery_gradient,
                               recovery_output, recovery_rate, recovery_step)
from zdshield.simcore import TimeGrid, Trajectory, finite_diff_jacobian


@pytest.fixture(scope="module")
def nominal():
    return four_tank_nominal()


@pytest.fixture(scope="module")
def op(nominal):
    return solve_operating_point(four_tank_actual(), nominal, None, [10.0, 10.0])


def test_output_zero_at_initial_weights(nominal, op):
    assert np.max(np.abs(recovery_output(nominal, op, initial_weights(op)))) < 1e-12


def test_zero_error_at_replica_equilibrium_is_pure_drift(nominal, op):
    w_eq = np.zeros(2)   # nominal internal equilibrium in estimator coordinates
    rate, skipped = recovery_rate(nominal, op, w_eq, np.zeros(2), 0.5)
    assert not skipped
    assert np.array_equal(rate, nominal.H(w_eq + op.z_star_n, op.x_star, clamp=True))
    assert np.max(np.abs(rate)) < 1e-9
    rec = RecoveryState(w_eq, engaged=True)
    first = recovery_step(rec, nominal, op, np.zeros(2), 0.01).copy()
    for _ in range(500):
        z_r = recovery_step(rec, nominal, op, np.zeros(2), 0.01)
    assert np.max(np.abs(z_r - first)) < 1e-9


def test_disengaged_state_outputs_zero(nominal, op):
    rec = RecoveryState(initial_weights(op) + 1.0)
    w = rec.w.copy()
    assert np.array_equal(recovery_step(rec, nominal, op, np.ones(2), 0.01), [0.0, 0.0])
    assert np.array_equal(rec.w, w)
    rec.engage(op)
    assert rec.engaged and np.array_equal(rec.w, initial_weights(op))


def test_invalid_settings_rejected():
    with pytest.raises(ValueError):
        RecoveryState(np.zeros(2), lam=0.0)
    with pytest.raises(ValueError):
        RecoveryState(np.zeros(2), form="other")


def test_apply_recovery_identities():
    u_c, alpha = np.array([2.0, 3.0]), np.array([-0.4, 1.1])
    assert np.array_equal(apply_recovery(u_c, alpha, np.zeros(2)), u_c + alpha)
    assert np.allclose(apply_recovery(u_c, alpha, alpha), u_c, atol=1e-15)
    assert np.array_equal(apply_recovery(u_c, alpha, alpha, engaged=False), u_c + alpha)


def test_gradient_matches_finite_differences(nominal, op):
    for form in ("attack_matched", "literal"):
        w = initial_weights(op) + np.array([0.4, -0.3])
        analytic = recovery_gradient(nominal, op, w, form)
        numeric = finite_diff_jacobian(lambda v: recovery_output(nominal, op, v, form), w)
        assert np.max(np.abs(analytic - numeric)) <= 1e-6 * np.max(np.abs(analytic))


def _traj(z1):
    grid = TimeGrid(0.0, 4.0, 1.0)
    return Trajectory(grid, {"z1": z1, "z2": np.zeros(5)})


def test_gamma_identical_runs_is_zero():
    clean = _traj(np.zeros(5))
    assert gamma_index(clean, _traj([0, 0, 2, 4, 4]), clean, (0.0, 4.0)) == 0.0


def test_gamma_ratio():
    clean = _traj(np.zeros(5))
    assert gamma_index(_traj([0, 0, 1, 0, 0]), _traj([0, 0, 2, 4, 4]), clean, (0.0, 4.0)) == 0.25


def test_gamma_without_attack_effect_raises():
    clean = _traj(np.zeros(5))
    with pytest.raises(AttackHadNoEffect):
        gamma_index(clean, clean, clean, (0.0, 4.0))
    with pytest.raises(ZeroDivisionError):
        gamma_index(clean, clean, clean, (0.0, 4.0))


def test_disengaged_neutrality():
    b = bench("scenario-a")
    det = dataclasses.replace(scenario("scenario-a").detector, threshold=np.inf)
    with_rec = b.run(attack=True, recovery=True, detector=det).trajectory
    without = b.run(attack=True, recovery=False, detector=det).trajectory
    assert with_rec["engaged"].max() == 0.0
    for name in with_rec.columns:
        assert np.array_equal(with_rec[name], without[name]), name


def test_doubled_learning_rate_stays_bounded():
    cfg = ScenarioConfig.from_dict(set_path(load_preset("scenario-a").to_dict(), "recovery.lam", 1.0))
    res = run_scenario(cfg)
    traj = res.runs["recovered"].trajectory
    win = traj.window(700.0, 1000.0, closed=False)
    w = traj.stack(["w1", "w2"])[win]
    err = traj.stack(["zr1", "zr2"])[win] - traj.stack(["alpha1", "alpha2"])[win]
    alpha_max = np.abs(traj.stack(["alpha1", "alpha2"])[win]).max()
    assert np.all(np.isfinite(w))
    assert np.abs(err).max() < alpha_max
    assert res.metrics["gamma"] <= 0.05
