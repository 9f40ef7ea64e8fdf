"""Nonlinear change of measure and the weak solution of the quadratic system.

From a solved forward-backward system under the sampling measure, build the
stochastic exponential of N = -int <f(s, Y_s, Z_s), dB_s>, reweight to the
target measure, and shift the Brownian motion to W = x + B + int f ds. Under
the new measure W is a Brownian motion and the unchanged pair (Y, Z) together
with W solves the quadratic equation

    dY = -h dt - Z f dt + Z dW,   Y_T = phi(W_T),

with Z invariant under the measure change (the density representation does
not depend on the equivalent measure). The discrete exponential uses
exp(N - [N]/2), which is positive by construction; the running state X of the
forward solve coincides with W path by path, since both are the same Euler
recursion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientWeightError, InvalidArgumentError, InvalidStateError
from .fde import CoefficientSet, FdeSolution
from .grid import BrownianEnsemble, TimeGrid
from .regression import RegressionBasis, polynomial_basis, monomial_exponents, _monomial_design


@dataclass
class MeasureChange:
    """Exponential-martingale reweighting data.

    n_integral[k] is the discrete stochastic integral N at step k,
    log_weights[k] = N_k - [N]_k / 2, weights are the terminal Radon-Nikodym
    values, and w_paths is the drift-shifted Brownian motion (equal to the
    forward state path by path).
    """

    grid: TimeGrid
    n_integral: np.ndarray          # (P, K+1)
    quadratic_variation: np.ndarray  # (P, K+1)
    log_weights: np.ndarray         # (P, K+1)
    weights: np.ndarray             # (P,) terminal
    w_paths: np.ndarray             # (P, K+1, d)
    f_values: np.ndarray = field(repr=False, default=None)  # (P, K, d)
    seed: int | None = None

    @property
    def weight_mean(self) -> float:
        return float(self.weights.mean())

    @property
    def weight_stderr(self) -> float:
        return float(self.weights.std(ddof=1) / np.sqrt(self.weights.size))

    @property
    def effective_sample_size(self) -> float:
        s = self.weights.sum()
        return float(s * s / np.sum(self.weights ** 2))

    def tail_mass_above_quantile(self, q: float = 0.999) -> float:
        """Weight mass carried by paths above the q-quantile of the weights."""
        cutoff = np.quantile(self.weights, q)
        return float(self.weights[self.weights > cutoff].sum() / self.weights.sum())


@dataclass
class WeakSolution:
    """The triple (Y, Z, W) under the reweighted measure, plus diagnostics."""

    grid: TimeGrid
    Y: np.ndarray
    Z: np.ndarray
    W: np.ndarray
    weights: np.ndarray
    residual: dict


def build_measure_change(sol: FdeSolution, coeffs: CoefficientSet,
                         ensemble: BrownianEnsemble, x0) -> MeasureChange:
    """Discrete N, [N], exp(N - [N]/2), and the shifted motion W.

    f is evaluated at left endpoints on the stored (Y, Z), matching the Euler
    convention of the forward solve, so W reproduces X bitwise.
    """
    if sol.seed is not None and sol.seed != ensemble.seed:
        raise InvalidArgumentError("solution was not produced on this ensemble")
    P = sol.num_paths
    K = sol.grid.num_steps
    d = coeffs.d
    t = sol.grid.points
    dt = sol.grid.dt
    x0v = np.broadcast_to(np.atleast_1d(np.asarray(x0, dtype=float)), (d,))

    f_values = np.empty((P, K, d))
    for k in range(K):
        f_values[:, k] = coeffs.eval_f(t[k], sol.Y[:, k], sol.Z[:, k])
    if not np.all(np.isfinite(f_values)):
        raise InvalidStateError("drift f produced non-finite values")

    n_int = np.zeros((P, K + 1))
    qv = np.zeros((P, K + 1))
    w = np.empty((P, K + 1, d))
    w[:, 0] = x0v
    for k in range(K):
        db = ensemble.increments[:, k]
        n_int[:, k + 1] = n_int[:, k] - np.einsum("pd,pd->p", f_values[:, k], db)
        qv[:, k + 1] = qv[:, k] + np.einsum("pd,pd->p", f_values[:, k], f_values[:, k]) * dt[k]
        w[:, k + 1] = w[:, k] + f_values[:, k] * dt[k] + db
    log_w = n_int - 0.5 * qv
    weights = np.exp(log_w[:, K])
    if not np.all(np.isfinite(weights)) or not np.all(weights > 0):
        raise InvalidStateError("exponential weights overflowed or degenerated")
    return MeasureChange(grid=sol.grid, n_integral=n_int, quadratic_variation=qv,
                         log_weights=log_w, weights=weights, w_paths=w,
                         f_values=f_values, seed=ensemble.seed)


def assemble_weak_solution(sol: FdeSolution, mc: MeasureChange,
                           coeffs: CoefficientSet) -> WeakSolution:
    """Package (Y, Z, W, weights) and check the weak integral equation.

    The per-path residual is
        Y_0 - phi(W_T) - sum h dt - sum (Z f) dt + sum Z dW,
    reported as a weighted rms since the equation lives under the target
    measure. Z is the solve's array unchanged (invariance realized literally).
    """
    if not np.array_equal(mc.grid.points, sol.grid.points):
        raise InvalidArgumentError("measure change and solution grids differ")
    K = sol.grid.num_steps
    t = sol.grid.points
    dt = sol.grid.dt
    resid = sol.Y[:, 0] - coeffs.eval_phi(mc.w_paths[:, K])
    for k in range(K):
        hk = coeffs.eval_h(t[k], sol.Y[:, k], sol.Z[:, k])
        zf = np.einsum("pnd,pd->pn", sol.Z[:, k], mc.f_values[:, k])
        dw = mc.w_paths[:, k + 1] - mc.w_paths[:, k]
        zdw = np.einsum("pnd,pd->pn", sol.Z[:, k], dw)
        resid = resid - hk * dt[k] - zf * dt[k] + zdw
    sq = np.einsum("pn,pn->p", resid, resid)
    weighted_rms = float(np.sqrt(np.sum(mc.weights * sq) / np.sum(mc.weights)))
    report = {"weighted_rms": weighted_rms,
              "unweighted_rms": float(np.sqrt(sq.mean())),
              "weight_mean": mc.weight_mean,
              "weight_stderr": mc.weight_stderr,
              "effective_sample_size": mc.effective_sample_size}
    return WeakSolution(grid=sol.grid, Y=sol.Y, Z=sol.Z, W=mc.w_paths,
                        weights=mc.weights, residual=report)


def _weighted_surface_fit(states, targets, basis, weights):
    """Weighted ridge regression returning an evaluator over raw states."""
    states = np.asarray(states, float)
    if states.ndim == 1:
        states = states[:, None]
    center = states.mean(axis=0)
    scale = np.maximum(states.std(axis=0), 1e-12)
    exps = monomial_exponents(states.shape[1], basis.p)
    A = _monomial_design((states - center) / scale, exps)
    Aw = A * weights[:, None]
    gram = Aw.T @ A
    lam = 1e-8 * float(np.linalg.eigvalsh(gram)[-1])
    coef = np.linalg.solve(gram + lam * np.eye(gram.shape[0]), Aw.T @ targets)

    def evaluate(pts):
        pts = np.asarray(pts, float)
        if pts.ndim == 1:
            pts = pts[:, None]
        return _monomial_design((pts - center) / scale, exps) @ coef

    return evaluate


def check_z_invariance(sol: FdeSolution, mc: MeasureChange, coeffs: CoefficientSet,
                       basis: RegressionBasis | None = None, *,
                       probe_steps=None, region_halfwidth: float = 2.0,
                       points_per_dim: int = 21) -> dict:
    """Compare Z surfaces estimated under both measures on the central region.

    The target-measure estimate regresses the reweighted martingale increment
    (dY + (h + Z f) dt) * dW / dt on the state with terminal weights; the
    sampling-measure surface is the solve's stored fit. Both sides live in the
    same approximation space (the stored fit's basis unless overridden), so
    the discrepancy measures the measure change, not the basis. Returns the
    maximum absolute discrepancy over the probe steps and evaluation grid.
    """
    K = sol.grid.num_steps
    d = coeffs.d
    if basis is None:
        stored = sol.z_fits[K // 2].basis
        basis = stored if stored.kind == "polynomial" else polynomial_basis(3, d)
    ess = mc.effective_sample_size
    if ess < 10 * basis.n_functions:
        raise InsufficientWeightError(
            f"effective sample size {ess:.1f} below {10 * basis.n_functions}")
    if probe_steps is None:
        probe_steps = sorted({max(1, K // 4), K // 2, max(1, (3 * K) // 4)})
    center = sol.x0 if sol.x0 is not None else np.zeros(d)

    def probe_mesh(states):
        # central region clipped to the bulk of the actual states: the
        # reweighted fit has no data beyond them
        lo = np.maximum(center - region_halfwidth, np.quantile(states, 0.01, axis=0))
        hi = np.minimum(center + region_halfwidth, np.quantile(states, 0.99, axis=0))
        axes = [np.linspace(a, b, points_per_dim) for a, b in zip(lo, hi)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)

    t = sol.grid.points
    dt = sol.grid.dt
    per_probe = []
    worst = 0.0
    for k in probe_steps:
        mesh = probe_mesh(sol.X[:, k])
        hk = coeffs.eval_h(t[k], sol.Y[:, k], sol.Z[:, k])
        zf = np.einsum("pnd,pd->pn", sol.Z[:, k], mc.f_values[:, k])
        dmp = sol.Y[:, k + 1] - sol.Y[:, k] + (hk + zf) * dt[k]
        dw = mc.w_paths[:, k + 1] - mc.w_paths[:, k]
        P, n = dmp.shape
        target = (dmp[:, :, None] * dw[:, None, :] / dt[k]).reshape(P, n * d)
        p_fit = _weighted_surface_fit(sol.X[:, k], target, basis, mc.weights)
        zq = sol.z_fits[k].evaluate(mesh).reshape(mesh.shape[0], n * d)
        zp = p_fit(mesh)
        disc = float(np.abs(zq - zp).max())
        per_probe.append({"step": int(k), "t": float(t[k]), "discrepancy": disc})
        worst = max(worst, disc)
    return {"max_discrepancy": worst, "per_probe": per_probe}


def bmo_diagnostic(sol: FdeSolution, coeffs: CoefficientSet, probe_times,
                   basis: RegressionBasis | None = None) -> dict:
    """Conditional remaining quadratic variation of N at deterministic probes.

    For each probe, regress sum_{k >= probe} |f_k|^2 dt_k on the probe state
    and report the mean and 99th percentile of the fitted values. Probes at
    deterministic times stand in for stopping times; this is a diagnostic,
    not a proof device.
    """
    K = sol.grid.num_steps
    t = sol.grid.points
    dt = sol.grid.dt
    basis = basis or polynomial_basis(2, coeffs.d)
    f_sq = np.empty((sol.num_paths, K))
    for k in range(K):
        fk = coeffs.eval_f(t[k], sol.Y[:, k], sol.Z[:, k])
        f_sq[:, k] = np.einsum("pd,pd->p", fk, fk) * dt[k]
    remaining = np.cumsum(f_sq[:, ::-1], axis=1)[:, ::-1]

    from .regression import StepRegression
    per_probe = []
    sup99 = 0.0
    for pt in probe_times:
        idx = int(np.argmin(np.abs(t - pt)))
        if abs(t[idx] - pt) > 1e-9 * max(1.0, sol.grid.horizon):
            raise InvalidArgumentError(f"probe time {pt} is not a grid point")
        if idx >= K:
            est = np.zeros(sol.num_paths)
        else:
            sr = StepRegression(sol.X[:, idx], basis)
            fit = sr.fit(remaining[:, idx][:, None], step_index=idx)
            est = fit.evaluate(sol.X[:, idx])[:, 0]
        p99 = float(np.quantile(est, 0.99))
        per_probe.append({"t": float(t[idx]), "mean": float(est.mean()), "p99": p99})
        sup99 = max(sup99, p99)
    return {"sup_p99": sup99, "per_probe": per_probe}


def export_weak_solution(weak: WeakSolution, csv_path, sidecar_path=None, *,
                         path_limit: int | None = None, config_echo: dict | None = None):
    """CSV of (path, step, t, Y.., Z.., W..) plus a weights-summary sidecar."""
    import json
    P = weak.Y.shape[0] if path_limit is None else min(path_limit, weak.Y.shape[0])
    K = weak.grid.num_steps
    n = weak.Y.shape[2]
    d = weak.W.shape[2]
    cols = (["path", "step", "t"] + [f"Y{i}" for i in range(n)]
            + [f"Z{i}{j}" for i in range(n) for j in range(d)]
            + [f"W{j}" for j in range(d)])
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for p in range(P):
            for k in range(K + 1):
                z_row = weak.Z[p, k].ravel() if k < K else np.zeros(n * d)
                vals = ([float(weak.grid.points[k])]
                        + [float(v) for v in weak.Y[p, k]]
                        + [float(v) for v in z_row]
                        + [float(v) for v in weak.W[p, k]])
                fh.write(f"{p},{k}," + ",".join(repr(v) for v in vals) + "\n")
    if sidecar_path is not None:
        side = {"residual": {k: float(v) for k, v in weak.residual.items()},
                "weights": {
                    "mean": float(weak.weights.mean()),
                    "variance": float(weak.weights.var(ddof=1)),
                    "max": float(weak.weights.max()),
                    "effective_sample_size": float(
                        weak.weights.sum() ** 2 / np.sum(weak.weights ** 2)),
                },
                "config": config_echo or {}}
        with open(sidecar_path, "w", encoding="utf-8") as fh:
            json.dump(side, fh, indent=2, sort_keys=True)
            fh.write("\n")
