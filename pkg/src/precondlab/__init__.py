"""precondlab: a laboratory for preconditioned stochastic gradient descent.

The iteration under study is w_{k+1} = w_k - alpha_k M^{-1} g_k for an SPD
metric M.  The package computes the metric constants that govern its rate
and noise floor in closed form on a diagnostic quadratic, evaluates the
matching bound envelopes, verifies them by Monte Carlo, and benchmarks
matrix-free curvature preconditioning on a small regression task.
"""

from . import engine, linalg, nn, precond, quadratic, theory

__version__ = "0.1.0"

__all__ = ["engine", "linalg", "nn", "precond", "quadratic", "theory", "__version__"]
