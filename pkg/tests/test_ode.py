import csv

import numpy as np
import pytest

from les_youla import autodiff as ad
from les_youla.ode import (TRAJECTORY_HEADER, IntegrationError, convergence_order, rk4_step,
                           rollout, write_trajectory_csv)


def decay(z):
    return -z


def test_rk4_step_on_linear_decay():
    assert rk4_step(decay, np.array([1.0]), 0.1)[0] == pytest.approx(0.90483750, abs=5e-9)
    h = 0.1
    poly = 1 - h + h ** 2 / 2 - h ** 3 / 6 + h ** 4 / 24
    assert rk4_step(decay, np.array([1.0]), h)[0] == pytest.approx(poly, abs=1e-15)


def test_rk4_step_trivial_fields():
    z0 = np.array([1.5, -2.0])
    np.testing.assert_array_equal(rk4_step(lambda z: 0.0 * z, z0, 0.3), z0)
    assert rk4_step(lambda z: np.ones_like(z), np.zeros(1), 0.5)[0] == 0.5


def test_rk4_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        rk4_step(decay, np.ones(1), 0.0)


def test_rk4_names_failing_stage():
    def bad(z):
        return np.where(z < 0.97, np.nan, -z)

    with pytest.raises(IntegrationError) as exc:
        rk4_step(bad, np.array([1.0]), 0.1)
    assert exc.value.stage in ("k2", "k3", "k4")


def test_rollout_reaches_repeated_rk4_factor():
    ro = rollout(decay, np.array([1.0]), 0.1, 10)
    factor = 1 - 0.1 + 0.1 ** 2 / 2 - 0.1 ** 3 / 6 + 0.1 ** 4 / 24
    assert ro.z[-1, 0] == pytest.approx(factor ** 10, rel=1e-14)
    assert ro.z[-1, 0] == pytest.approx(np.exp(-1.0), abs=1e-6)
    assert len(ro.t) == len(ro.z) == 11
    np.testing.assert_allclose(np.diff(ro.t), 0.1)


def test_rollout_error_carries_step_index():
    def F(z):
        return np.where(z > 3.0, np.inf, z)

    with pytest.raises(IntegrationError) as exc:
        rollout(F, np.array([1.0]), 0.5, 10)
    assert exc.value.step is not None and exc.value.step > 0


def test_rollout_at_equilibrium_stays_put():
    ro = rollout(lambda z: z * z * z, np.zeros(3), 0.01, 50, readout=lambda z: z[:1])
    assert np.all(ro.z == 0.0) and np.all(ro.u == 0.0)


def test_constant_running_cost_accumulates_exactly():
    c = 0.7
    F = lambda z: ad.concatenate([0.0 * z[..., :1], c + 0.0 * z[..., 1:]], axis=-1)
    ro = rollout(F, np.zeros(2), 0.01, 400)
    assert ro.J_T == pytest.approx(c * 4.0, rel=1e-12)


def test_cost_accumulator_matches_trapezoid_of_samples():
    F = lambda z: ad.concatenate([-z[..., :1], z[..., :1] * z[..., :1]], axis=-1)
    h, N = 0.01, 400
    ro = rollout(F, np.array([1.0, 0.0]), h, N)
    trap = np.trapezoid(ro.z[:, 0] ** 2, ro.t)
    assert abs(ro.J_T - trap) <= h ** 2 * 4.0


def test_convergence_order_is_four():
    exact = lambda T: np.array([np.exp(-T)])
    order, ratio = convergence_order(decay, np.array([1.0]), 1.0, 0.1, exact)
    assert order == pytest.approx(4.0, abs=0.2)
    assert 12.0 <= ratio <= 20.0
    order, _ = convergence_order(decay, np.array([1.0]), 1.0, 0.2, exact)
    assert order == pytest.approx(4.0, abs=0.3)


def test_convergence_order_exact_for_constant_field():
    order, _ = convergence_order(lambda z: np.ones_like(z), np.zeros(1), 1.0, 0.1,
                                 lambda T: np.array([T]))
    assert order == "exact"


def test_begin_step_hook_runs_before_each_step():
    class Held:
        def __init__(self):
            self.calls = 0

        def begin_step(self, z):
            self.calls += 1

        def field(self, z):
            return -z

    F = Held()
    rollout(F, np.ones(1), 0.1, 5)
    assert F.calls == 5
    F = Held()
    rollout(F, np.ones(1), 0.1, 5, readout=lambda z: z)
    assert F.calls == 6


def test_trajectory_csv_header(tmp_path):
    t = np.array([0.0, 0.1])
    x = np.zeros((2, 4))
    write_trajectory_csv(tmp_path / "a.csv", t, x, np.zeros((2, 1)), np.array([[0, 1], [0, 1.0]]),
                         np.zeros(2))
    rows = list(csv.reader(open(tmp_path / "a.csv")))
    assert rows[0] == TRAJECTORY_HEADER == ["t", "p", "pdot", "theta", "thetadot", "u", "tip_x",
                                            "tip_y", "stage_cost"]
    assert len(rows) == 3
