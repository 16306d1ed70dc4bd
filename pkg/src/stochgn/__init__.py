"""Stochastic Gauss-Newton (prox-linear) methods for stochastic compositional
problems ``min_x phi(E[F(x, xi)]) + g(x)``."""

__version__ = "0.1.0"
