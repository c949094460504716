"""Locally exponentially stabilizing policies as a linear gain plus stable
Youla-residual dynamics, trained by backpropagation through RK4 rollouts."""
from .lincontrol import is_hurwitz, lqr, solve_lyapunov
from .plant import CartPole, CartPoleParams, ObstacleField
from .policy import YoulaLRU, make_policy
from .training import TrainConfig, train

__version__ = "0.1.0"
__all__ = ["CartPole", "CartPoleParams", "ObstacleField", "TrainConfig", "YoulaLRU",
           "is_hurwitz", "lqr", "make_policy", "solve_lyapunov", "train"]
