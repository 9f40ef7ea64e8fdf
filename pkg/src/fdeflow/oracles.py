"""Independent desk-scale oracles used by the verification suite.

Nothing here touches the Monte Carlo solver: quadrature integrates against
the exact Gaussian kernel, and the finite-difference scheme solves the
associated linear PDE on a bounded box. Both are cheap enough to run inside
every verify pass.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import InvalidArgumentError


def gaussian_expectation(fn, mean=0.0, variance=1.0, nodes: int = 101):
    """E[fn(N(mean, variance))] by Gauss-Hermite quadrature; fn vectorized."""
    if variance < 0:
        raise InvalidArgumentError("variance must be non-negative")
    if variance == 0:
        return fn(np.asarray(mean))
    x, w = hermegauss(nodes)
    w = w / w.sum()
    mean = np.asarray(mean, dtype=float)
    vals = fn(mean[..., None] + np.sqrt(variance) * x)
    return (vals * w).sum(axis=-1)


def heat_value(terminal_fn, t: float, x, T: float, nodes: int = 101):
    """u(t, x) = E[terminal_fn(x + B_{T-t})] for a standard Brownian motion."""
    if t > T:
        raise InvalidArgumentError("t must not exceed T")
    return gaussian_expectation(terminal_fn, mean=np.asarray(x, dtype=float),
                                variance=T - t, nodes=nodes)


class CrankNicolsonOracle:
    """Theta-scheme solve of u_t + 0.5 u_xx + a u = 0, u(T, .) = terminal.

    Dirichlet boundaries hold the terminal values at the box edges; keep the
    box wide enough that the probe region never feels them.
    """

    def __init__(self, a: float, terminal_fn, T: float, x_min: float = -6.0,
                 x_max: float = 6.0, num_space: int = 400, num_time: int = 400):
        self.a = a
        self.T = T
        self.xs = np.linspace(x_min, x_max, num_space)
        dx = self.xs[1] - self.xs[0]
        dt = T / num_time
        m = num_space - 2
        lap = (np.diag(np.full(m - 1, 1.0), -1)
               + np.diag(np.full(m, -2.0))
               + np.diag(np.full(m - 1, 1.0), 1)) / dx ** 2
        op = 0.5 * lap + a * np.eye(m)
        lhs = np.eye(m) - 0.5 * dt * op
        rhs = np.eye(m) + 0.5 * dt * op
        u = np.asarray(terminal_fn(self.xs), dtype=float).copy()
        self.times = np.linspace(0.0, T, num_time + 1)
        self.values = np.empty((num_time + 1, num_space))
        self.values[-1] = u
        bc_left, bc_right = u[0], u[-1]
        lhs_inv = np.linalg.inv(lhs)
        for i in range(num_time - 1, -1, -1):
            interior = lhs_inv @ (rhs @ u[1:-1])
            u = u.copy()
            u[1:-1] = interior
            u[0], u[-1] = bc_left, bc_right
            self.values[i] = u

    def at(self, t: float, x) -> np.ndarray:
        """Bilinear interpolation of the stored solution."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ti = np.searchsorted(self.times, t)
        ti = min(max(ti, 0), self.times.size - 1)
        if abs(self.times[ti] - t) > 1e-12 and ti > 0 and t < self.times[ti]:
            lam = (t - self.times[ti - 1]) / (self.times[ti] - self.times[ti - 1])
            row = (1 - lam) * self.values[ti - 1] + lam * self.values[ti]
        else:
            row = self.values[ti]
        return np.interp(x, self.xs, row)


def merton_y0(mu_s, sigma_bar_s: float, gamma: float, T: float,
              samples: int = 4097) -> float:
    """Quadrature of the deterministic auxiliary value integral."""
    ts = np.linspace(0.0, T, samples)
    if callable(mu_s):
        mu = np.array([mu_s(t) for t in ts])
    else:
        mu = np.full_like(ts, float(mu_s))
    vals = mu ** 2 / (2.0 * gamma * sigma_bar_s ** 2)
    return float(np.trapezoid(vals, ts))


def merton_drift_factor(gamma: float, sigma_bar_s: float, delta: float) -> float:
    """Per-unit-time log drift of the utility process under a constant offset."""
    return 0.5 * gamma ** 2 * sigma_bar_s ** 2 * delta ** 2
