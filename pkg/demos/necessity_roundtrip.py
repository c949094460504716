"""Rewrite a dynamic linear controller in observer-plus-Q form and replay it.

The two closed loops produce the same input trajectory up to round-off.

    python demos/necessity_roundtrip.py
"""
import numpy as np

from les_youla import CartPole, lqr
from les_youla.necessity import equivalence_check, linear_controller, necessity_transform

plant = CartPole()
A, B = plant.linearize()
K = lqr(A, B, np.diag([10.0, 1.0, 100.0, 1.0]), np.array([[0.1]])).K

ctrl = linear_controller(K, Ac=[[-2.0, 1.0], [0.0, -3.0]], Bc=0.1 * np.ones((2, 4)),
                         Cc=[[0.5, -0.5]])
tr = necessity_transform(ctrl, plant, K)
x0 = np.array([0.03, 0.0, 0.03, -0.01])
rep = equivalence_check(tr, plant, x0, T=5.0, h=0.01)
print("original vs transformed, T = 5 s:")
for k, v in rep.items():
    print(f"  {k:22s} {v}")

off = equivalence_check(tr, plant, x0, T=5.0, h=0.01, q1_offset=1e-3)
print(f"with q1(0) perturbed by 1e-3: max state deviation {off['max_state_deviation']:.2e}")
