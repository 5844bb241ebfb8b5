"""Successive approximations, comparison-equation error bounds and region estimates
for weakly nonlinear time-varying ODE systems ``x' = A(t) x + f(t, x) + F0 eta(t)``."""

__version__ = "0.1.0"
