"""Convex penalties: elastic net family (lasso and ridge as special cases).

The penalty g(b) = lam * ||b||_1 + (tau/2) * ||b||_2^2 is convex and
minimized at zero; with tau > 0 it is tau-strongly convex. Its prox has the
componentwise closed form used by the solver, and produces exact zeros —
those zeros define the active set downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ElasticNet:
    """g(b) = lam * ||b||_1 + (tau/2) * ||b||_2^2 with lam, tau >= 0."""

    lam: float = 0.0
    tau: float = 0.0

    def __post_init__(self):
        if self.lam < 0 or not np.isfinite(self.lam):
            raise ValueError("l1 weight lam must be a nonnegative finite real")
        if self.tau < 0 or not np.isfinite(self.tau):
            raise ValueError("ridge weight tau must be a nonnegative finite real")

    def value(self, b) -> float:
        b = np.asarray(b, dtype=float)
        return float(self.lam * np.sum(np.abs(b)) + 0.5 * self.tau * np.sum(b * b))

    def prox(self, v, step: float):
        """argmin_b ||b - v||^2 / (2*step) + g(b), componentwise.

        Soft-threshold at step*lam, then shrink by 1/(1 + step*tau). The
        max() produces exact zeros.
        """
        if step <= 0:
            raise ValueError("prox step must be positive")
        v = np.asarray(v, dtype=float)
        shrunk = np.sign(v) * np.maximum(np.abs(v) - step * self.lam, 0.0)
        return shrunk / (1.0 + step * self.tau)


def ridge(tau: float) -> ElasticNet:
    """Pure ridge penalty (tau/2) * ||b||_2^2."""
    return ElasticNet(lam=0.0, tau=tau)


def lasso(lam: float) -> ElasticNet:
    """Pure l1 penalty lam * ||b||_1."""
    return ElasticNet(lam=lam, tau=0.0)
