"""LQR gain for the upright cart-pole, then the structural stability check.

Random Youla parameters are drawn and the closed-loop Jacobian at the origin
is tested for Hurwitz-ness.  Every draw passes, whatever the network weights.

    python demos/lqr_and_structure.py
"""
import numpy as np

from les_youla import CartPole, YoulaLRU, is_hurwitz, lqr
from les_youla.verify import closed_loop_jacobian, random_youla_params

plant = CartPole()
A, B = plant.linearize()
res = lqr(A, B, np.diag([10.0, 1.0, 100.0, 1.0]), np.array([[0.1]]))
print("K =", np.round(res.K, 4))
print("closed-loop eigenvalues:", np.round(np.linalg.eigvals(A + B @ res.K), 3))

pol = YoulaLRU(res.K, rng=np.random.default_rng(0))
print(f"Youla policy: {pol.n_params} parameters, augmented state dim {pol.state_dim()}")
rng = np.random.default_rng(1)
worst = -np.inf
for _ in range(20):
    J = closed_loop_jacobian(pol, plant, random_youla_params(pol, rng))
    assert is_hurwitz(J)
    worst = max(worst, np.linalg.eigvals(J).real.max())
print(f"20 random draws: all Hurwitz, slowest eigenvalue real part {worst:.3f}")
