import numpy as np
import pytest

from les_youla.lincontrol import lqr
from les_youla.necessity import (PreconditionError, equivalence_check, linear_controller,
                                 necessity_transform)
from les_youla.plant import CartPole
from les_youla.policy import GenericCController, check_conditions

PLANT = CartPole()
A, B = PLANT.linearize()
K = lqr(A, B, np.diag([10.0, 1.0, 100.0, 1.0]), [[0.1]]).K
DYN = dict(Ac=[[-2.0, 1.0], [0.0, -3.0]], Bc=0.1 * np.ones((2, 4)), Cc=[[0.5, -0.5]])


def test_static_lqr_transform_dims_and_conditions():
    tr = necessity_transform(linear_controller(K), PLANT, K)
    assert tr.result.n_q == 4
    rep = check_conditions(tr.result, PLANT, draws=100)
    assert all(rep[c]["pass"] for c in ("i", "ii", "iii", "iv"))


def test_dynamic_controller_transform_dims():
    tr = necessity_transform(linear_controller(K, **DYN), PLANT, K)
    assert tr.result.n_q == 6
    rep = check_conditions(tr.result, PLANT, draws=50)
    assert all(rep[c]["pass"] for c in ("i", "ii", "iii", "iv"))


def test_zero_controller_fails_iii_only():
    zero = GenericCController(f_c=None, h_c=lambda xc, x: 0.0 * x[..., :1], n_c=0)
    tr = necessity_transform(zero, PLANT, K)
    rep = check_conditions(tr.result, PLANT, draws=20)
    assert rep["i"]["pass"] and rep["ii"]["pass"] and rep["iv"]["pass"]
    assert not rep["iii"]["pass"]


def test_precondition_errors():
    with pytest.raises(PreconditionError) as exc:
        necessity_transform(linear_controller(K), PLANT, np.zeros((1, 4)))
    assert exc.value.condition == "i"
    with pytest.raises(PreconditionError) as exc:
        necessity_transform(linear_controller(K), PLANT, K, s=lambda z: z)
    assert exc.value.condition == "ii"
    with pytest.raises(PreconditionError):
        necessity_transform(linear_controller(K), PLANT, K, s=lambda z: -z + 1.0)


def test_initial_state_matches_q1_to_xhat():
    tr = necessity_transform(linear_controller(K, **DYN, xc0=[0.3, -0.1]), PLANT, K)
    z = tr.initial_state(np.array([0.1, 0, 0, 0]), xhat0=np.array([0.2, 0, 0, 0]))
    np.testing.assert_array_equal(z[4:8], z[8:12])
    np.testing.assert_array_equal(z[12:], [0.3, -0.1])


def test_lqr_equivalence_at_nominal_x0():
    tr = necessity_transform(linear_controller(K), PLANT, K)
    r = equivalence_check(tr, PLANT, np.array([0.05, 0.0, 0.05, 0.0]), T=5.0, h=0.01)
    assert r["steps"] == 500
    assert r["max_input_deviation"] <= 1e-9
    assert r["max_xhat_q1_gap"] <= 1e-9


def test_zero_initial_state_gives_zero_deviation():
    tr = necessity_transform(linear_controller(K, **DYN), PLANT, K)
    r = equivalence_check(tr, PLANT, np.zeros(4), T=1.0)
    assert r["max_input_deviation"] == 0.0 and r["max_state_deviation"] == 0.0


def test_mismatched_initialization_is_detected():
    tr = necessity_transform(linear_controller(K, **DYN), PLANT, K)
    r = equivalence_check(tr, PLANT, np.array([0.05, 0.0, 0.05, 0.0]), T=5.0,
                          q1_offset=0.01 * np.ones(4))
    assert r["max_state_deviation"] > 1e-3


def test_arbitrary_xhat0_still_equivalent():
    # x-hat(0) need not equal x(0); only q1(0) = x-hat(0) matters
    tr = necessity_transform(linear_controller(K, **DYN), PLANT, K)
    r = equivalence_check(tr, PLANT, np.array([0.02, 0.0, -0.03, 0.01]), T=5.0,
                          xhat0=np.array([0.1, -0.1, 0.0, 0.05]))
    assert r["max_input_deviation"] <= 1e-8
