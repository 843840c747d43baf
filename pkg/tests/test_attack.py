import numpy as np
import pytest

from conftest import scenario
from zdshield.attack import (AttackState, attack_signal, attack_step, in_window, rotate, stealth_probe)
from zdshield.errors import GridMismatch
from zdshield.plant import four_tank_actual, four_tank_nominal, solve_operating_point
from zdshield.simcore import TimeGrid, Trajectory


@pytest.fixture(scope="module")
def nominal():
    return four_tank_nominal()


@pytest.fixture(scope="module")
def op(nominal):
    return solve_operating_point(four_tank_actual(), nominal, None, [10.0, 10.0])


def test_identity_offset_cancels(nominal, op):
    alpha = attack_signal(nominal, op, op.z_star - op.z_star_n)
    assert np.max(np.abs(alpha)) <= 1e-12


def test_window_is_half_open():
    assert not in_window(699.99, 700, 1000)
    assert in_window(700.0, 700, 1000)
    assert in_window(999.99, 700, 1000)
    assert not in_window(1000.0, 700, 1000)


def test_silent_and_frozen_outside_window(nominal, op):
    st = AttackState.start(op, 1.0, 2.0)
    before = st.delta_tilde.copy()
    for k in range(100):
        assert np.array_equal(attack_step(st, nominal, op, k * 0.01, 0.01), [0.0, 0.0])
    assert np.array_equal(st.delta_tilde, before)
    assert np.any(attack_step(st, nominal, op, 1.0, 0.01) != 0)
    assert not np.array_equal(st.delta_tilde, before)


def test_invalid_window_rejected(op):
    with pytest.raises(ValueError):
        AttackState.start(op, 5.0, 5.0)


def test_scenario_a_injection_zero_outside_window():
    traj = scenario("scenario-a").runs["attacked"].trajectory
    outside = ~traj.window(700.0, 1000.0, closed=False)
    assert np.all(traj["alpha1"][outside] == 0.0)
    assert np.all(traj["alpha2"][outside] == 0.0)
    inside = traj.window(700.0, 1000.0, closed=False)
    assert np.max(np.abs(traj.stack(["alpha1", "alpha2"])[inside])) > 0


def _replica_excursion(nominal, op, delta0, seconds=50.0, dt=0.01):
    st = AttackState.start(op, 0.0, 1e9, delta0)
    start = op.z_star - op.z_star_n
    out = []
    for k in range(int(round(seconds / dt))):
        attack_step(st, nominal, op, k * dt, dt)
        out.append(np.linalg.norm(st.delta_tilde - start))
    return np.array(out)


def test_replica_excursion_grows_monotonically(nominal, op):
    norms = _replica_excursion(nominal, op, [-0.1, -0.1])
    assert np.all(np.diff(norms) > 0)
    assert norms[-1] > 10 * norms[0]


def test_nominal_zero_dynamics_has_unstable_mode(nominal, op):
    eig = np.linalg.eigvals(nominal.dH_dz(op.z_star_n, op.x_star))
    assert np.max(eig.real) > 0


def _traj(values):
    grid = TimeGrid(0.0, 1.0, 0.25)
    return Trajectory(grid, {"x1": values, "x2": np.zeros(5)})


def test_stealth_probe_identical():
    a = _traj(np.arange(5.0))
    rep = stealth_probe(a, _traj(np.arange(5.0)), 1e-9)
    assert rep.deviation == 0.0 and rep.stealthy


def test_stealth_probe_measures_gap():
    rep = stealth_probe(_traj([0, 0, 3, 0, 0]), _traj(np.zeros(5)), 1.0, window=(0.4, 1.0))
    assert rep.deviation == 3.0 and not rep.stealthy


def test_stealth_probe_grid_mismatch():
    other = Trajectory(TimeGrid(0.0, 1.0, 0.5), {"x1": np.zeros(3), "x2": np.zeros(3)})
    with pytest.raises(GridMismatch):
        stealth_probe(_traj(np.zeros(5)), other, 1.0)


def test_rotate_keeps_norm():
    v = np.array([3.0, -4.0])
    w = rotate(v, 1.3)
    assert np.linalg.norm(w) == pytest.approx(5.0, rel=1e-14)
    assert np.allclose(rotate(v, 0.0), v)
