"""Regression-based conditional expectations and the martingale-density estimator.

Least-squares Monte Carlo: project per-path payoffs onto basis functions of a
conditioning state. Fits can be restricted to a state box (the standard
in-region trick from exercise-boundary regressions); outside the box a fitted
surface continues linearly from the boundary, which keeps far-tail
evaluations bounded without distorting the fit region.

An exact binomial-lattice oracle backs the regressions at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .errors import InvalidArgumentError

RIDGE_FACTOR = 1e-8          # ridge = RIDGE_FACTOR * (largest design singular value)^2
MIN_PATHS_PER_FUNCTION = 10  # required sample-to-basis ratio
_DEGENERATE_SPAN = 1e-12


@dataclass(frozen=True)
class RegressionBasis:
    """Basis family for conditional-expectation fits.

    kind: "polynomial" (global monomials up to total degree p) or
    "quantile-linear" (piecewise-linear hats on p quantile bins, 1-D states).
    """

    kind: str
    p: int
    state_dim: int

    def __post_init__(self):
        if self.kind not in ("polynomial", "quantile-linear"):
            raise InvalidArgumentError(f"unknown basis kind {self.kind!r}")
        if self.p < 1:
            raise InvalidArgumentError(f"basis size must be >= 1, got {self.p}")
        if self.state_dim < 1:
            raise InvalidArgumentError(f"state_dim must be >= 1, got {self.state_dim}")
        if self.kind == "quantile-linear" and self.state_dim != 1:
            raise InvalidArgumentError("quantile-linear basis supports 1-D states only")

    @property
    def n_functions(self) -> int:
        if self.kind == "polynomial":
            return math.comb(self.p + self.state_dim, self.state_dim)
        return self.p + 1


def polynomial_basis(degree: int, state_dim: int) -> RegressionBasis:
    return RegressionBasis("polynomial", degree, state_dim)


def quantile_linear_basis(bins: int) -> RegressionBasis:
    return RegressionBasis("quantile-linear", bins, 1)


def monomial_exponents(state_dim: int, degree: int) -> list[tuple[int, ...]]:
    """Total-degree multi-indices: constant first, then degree 1, 2, ..."""
    exps = [(0,) * state_dim]
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(state_dim), deg):
            e = [0] * state_dim
            for j in combo:
                e[j] += 1
            exps.append(tuple(e))
    return exps


def _monomial_design(u: np.ndarray, exps) -> np.ndarray:
    P, d = u.shape
    maxdeg = max((max(e) for e in exps), default=0)
    pows = []
    for j in range(d):
        col = [np.ones(P)]
        for _ in range(maxdeg):
            col.append(col[-1] * u[:, j])
        pows.append(col)
    A = np.empty((P, len(exps)))
    for i, e in enumerate(exps):
        c = None
        for j, ej in enumerate(e):
            if ej:
                c = pows[j][ej] if c is None else c * pows[j][ej]
        A[:, i] = 1.0 if c is None else c
    return A


def _standardized_to_raw(coef: np.ndarray, exps, center: np.ndarray,
                         scale: np.ndarray) -> np.ndarray:
    """Re-express coefficients of ((x-c)/s)^e monomials on raw x^e monomials."""
    index = {e: i for i, e in enumerate(exps)}
    raw = np.zeros_like(coef)
    d = center.size
    for i, e in enumerate(exps):
        # expand prod_j ((x_j - c_j)/s_j)^{e_j} term by term
        terms = [((), 1.0)]
        for j in range(d):
            ej = e[j]
            if ej == 0:
                terms = [(ex + (0,), w) for ex, w in terms]
                continue
            sj = scale[j] ** ej
            new_terms = []
            for ex, w in terms:
                for i_j in range(ej + 1):
                    wj = math.comb(ej, i_j) * ((-center[j]) ** (ej - i_j)) / sj
                    new_terms.append((ex + (i_j,), w * wj))
            terms = new_terms
        for ex, w in terms:
            raw[index[ex]] += w * coef[i]
    return raw


class _PolynomialEvaluator:
    def __init__(self, coef_std, exps, center, scale, lo, hi):
        self.coef_std = coef_std
        self.exps = exps
        self.center = center
        self.scale = scale
        self.lo = lo
        self.hi = hi

    def _inside(self, states):
        u = (states - self.center) / self.scale
        return _monomial_design(u, self.exps) @ self.coef_std

    def _gradient_dim(self, states, j):
        reduced = [(i, e[j], tuple(v - (1 if k == j else 0) for k, v in enumerate(e)))
                   for i, e in enumerate(self.exps) if e[j] > 0]
        if not reduced:
            return np.zeros((states.shape[0], self.coef_std.shape[1]))
        u = (states - self.center) / self.scale
        A = _monomial_design(u, [r[2] for r in reduced])
        C = self.coef_std[[r[0] for r in reduced]] * np.array([r[1] for r in reduced], float)[:, None]
        return (A @ C) / self.scale[j]

    def __call__(self, states):
        clipped = np.clip(states, self.lo, self.hi)
        out = self._inside(clipped)
        over = states - clipped
        if np.any(over):
            for j in range(states.shape[1]):
                mask = over[:, j] != 0.0
                if mask.any():
                    out[mask] += self._gradient_dim(clipped[mask], j) * over[mask, j:j + 1]
        return out


class _HatEvaluator:
    def __init__(self, knots, values):
        self.knots = knots    # (m,)
        self.values = values  # (m, n_out)

    def __call__(self, states):
        x = states[:, 0]
        k = self.knots
        # np.interp per output column with end-slope linear continuation
        out = np.empty((x.size, self.values.shape[1]))
        for c in range(self.values.shape[1]):
            v = self.values[:, c]
            y = np.interp(x, k, v)
            if k.size >= 2:
                left = x < k[0]
                if left.any():
                    slope = (v[1] - v[0]) / (k[1] - k[0])
                    y[left] = v[0] + slope * (x[left] - k[0])
                right = x > k[-1]
                if right.any():
                    slope = (v[-1] - v[-2]) / (k[-1] - k[-2])
                    y[right] = v[-1] + slope * (x[right] - k[-1])
            out[:, c] = y
        return out


class _ConstantEvaluator:
    def __init__(self, value):
        self.value = value  # (n_out,)

    def __call__(self, states):
        return np.broadcast_to(self.value, (states.shape[0], self.value.size)).copy()


@dataclass
class FittedConditional:
    """A fitted conditional-mean surface for one time step.

    ``coefficients`` are reported on the raw basis (plain monomials, or hat
    node values); evaluation uses the internally standardized representation.
    """

    coefficients: np.ndarray
    basis: RegressionBasis
    step_index: int
    residual_l2: float
    warning: bool = False
    out_shape: tuple | None = None
    _evaluator: object = field(default=None, repr=False)

    def evaluate(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.shape[1] != self.basis.state_dim:
            raise InvalidArgumentError(
                f"state dim {states.shape[1]} != basis dim {self.basis.state_dim}")
        out = self._evaluator(states)
        if self.out_shape is not None:
            return out.reshape((states.shape[0],) + tuple(self.out_shape))
        return out

    __call__ = evaluate

    def to_record(self) -> str:
        """One-line plain-text record (step, basis descriptor, coefficients, residual)."""
        fields = [
            f"step={self.step_index}",
            f"basis={self.basis.kind}:{self.basis.p}:{self.basis.state_dim}",
            f"residual={float(self.residual_l2)!r}",
            f"warning={int(self.warning)}",
            f"out_shape={','.join(str(v) for v in self.out_shape) if self.out_shape else '-'}",
        ]
        if isinstance(self._evaluator, _ConstantEvaluator):
            fields.append("mode=constant")
            fields.append("values=" + _encode_floats(self._evaluator.value))
        elif isinstance(self._evaluator, _HatEvaluator):
            fields.append("mode=hat")
            fields.append("knots=" + _encode_floats(self._evaluator.knots))
            fields.append("values=" + _encode_floats(self._evaluator.values.ravel()))
        else:
            ev = self._evaluator
            fields.append("mode=poly")
            fields.append("center=" + _encode_floats(ev.center))
            fields.append("scale=" + _encode_floats(ev.scale))
            fields.append("lo=" + _encode_floats(ev.lo))
            fields.append("hi=" + _encode_floats(ev.hi))
            fields.append("coef_std=" + _encode_floats(ev.coef_std.ravel()))
        fields.append("coef=" + _encode_floats(self.coefficients.ravel()))
        return " ".join(fields)

    @classmethod
    def from_record(cls, record: str) -> "FittedConditional":
        kv = dict(tok.split("=", 1) for tok in record.split())
        kind, p, dim = kv["basis"].split(":")
        basis = RegressionBasis(kind, int(p), int(dim))
        out_shape = None if kv["out_shape"] == "-" else tuple(
            int(v) for v in kv["out_shape"].split(","))
        n_out = int(np.prod(out_shape)) if out_shape else None
        mode = kv["mode"]
        if mode == "constant":
            values = _decode_floats(kv["values"])
            if n_out is None:
                n_out = values.size
            evaluator = _ConstantEvaluator(values)
            coef = _decode_floats(kv["coef"]).reshape(-1, n_out)
        elif mode == "hat":
            knots = _decode_floats(kv["knots"])
            flat = _decode_floats(kv["values"])
            n_out = n_out or flat.size // knots.size
            evaluator = _HatEvaluator(knots, flat.reshape(knots.size, n_out))
            coef = _decode_floats(kv["coef"]).reshape(knots.size, n_out)
        else:
            exps = monomial_exponents(basis.state_dim, basis.p)
            coef_flat = _decode_floats(kv["coef_std"])
            n_out = n_out or coef_flat.size // len(exps)
            evaluator = _PolynomialEvaluator(
                coef_flat.reshape(len(exps), n_out), exps,
                _decode_floats(kv["center"]), _decode_floats(kv["scale"]),
                _decode_floats(kv["lo"]), _decode_floats(kv["hi"]))
            coef = _decode_floats(kv["coef"]).reshape(len(exps), n_out)
        return cls(coefficients=coef, basis=basis, step_index=int(kv["step"]),
                   residual_l2=float(kv["residual"]), warning=bool(int(kv["warning"])),
                   out_shape=out_shape, _evaluator=evaluator)


def _encode_floats(arr) -> str:
    return ",".join(repr(float(v)) for v in np.asarray(arr, dtype=float).ravel())


def _decode_floats(s: str) -> np.ndarray:
    return np.array([float(v) for v in s.split(",")], dtype=float)


class StepRegression:
    """Shared design for several fits against the same conditioning states.

    Builds the (optionally box-restricted) design matrix and its regularized
    Gram factorization once; ``fit`` then solves per target set. The ridge
    parameter is RIDGE_FACTOR times the largest design singular value squared.
    """

    def __init__(self, states: np.ndarray, basis: RegressionBasis,
                 fit_window: tuple | None = None):
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.shape[1] != basis.state_dim:
            raise InvalidArgumentError(
                f"state dim {states.shape[1]} != basis dim {basis.state_dim}")
        self.basis = basis
        self.states = states
        self.warning = False
        n_req = MIN_PATHS_PER_FUNCTION * basis.n_functions
        self.mask = None
        sel = states
        if fit_window is not None:
            lo, hi = (np.asarray(v, dtype=float) for v in fit_window)
            mask = np.all((states >= lo) & (states <= hi), axis=1)
            if mask.sum() >= n_req:
                self.mask = mask
                sel = states[mask]
            else:
                self.warning = True  # window too thin, fall back to all paths
        self.fit_states = sel
        span = sel.max(axis=0) - sel.min(axis=0)
        self.degenerate = bool(np.all(span < _DEGENERATE_SPAN))
        if self.degenerate:
            return
        self.lo = sel.min(axis=0)
        self.hi = sel.max(axis=0)
        if basis.kind == "polynomial":
            self.center = sel.mean(axis=0)
            self.scale = np.maximum(sel.std(axis=0), _DEGENERATE_SPAN)
            self.exps = monomial_exponents(basis.state_dim, basis.p)
            u = (sel - self.center) / self.scale
            self._design = _monomial_design(u, self.exps)
        else:
            knots = np.quantile(sel[:, 0], np.linspace(0.0, 1.0, basis.p + 1))
            self.knots = np.unique(knots)
            if self.knots.size < 2:
                self.degenerate = True
                return
            self._design = self._hat_design(sel[:, 0])
        gram = self._design.T @ self._design
        eigs = np.linalg.eigvalsh(gram)
        smax2 = float(eigs[-1])
        if eigs[0] < 1e-12 * smax2:
            self.warning = True
        self._gram_reg = gram + RIDGE_FACTOR * smax2 * np.eye(gram.shape[0])

    def _hat_design(self, x: np.ndarray) -> np.ndarray:
        k = self.knots
        A = np.zeros((x.size, k.size))
        idx = np.clip(np.searchsorted(k, x, side="right") - 1, 0, k.size - 2)
        left = k[idx]
        width = k[idx + 1] - left
        lam = np.clip((x - left) / width, 0.0, 1.0)
        rows = np.arange(x.size)
        A[rows, idx] = 1.0 - lam
        A[rows, idx + 1] = lam
        return A

    def fit(self, targets: np.ndarray, step_index: int = 0,
            out_shape: tuple | None = None) -> FittedConditional:
        targets = np.asarray(targets, dtype=float)
        if targets.ndim == 1:
            targets = targets[:, None]
        if targets.shape[0] != self.states.shape[0]:
            raise InvalidArgumentError("state and target path counts differ")
        tsel = targets[self.mask] if self.mask is not None else targets
        if self.degenerate:
            mean = tsel.mean(axis=0)
            resid = float(np.sqrt(np.mean((tsel - mean) ** 2)))
            coef = np.zeros((self.basis.n_functions, mean.size))
            coef[0] = mean
            return FittedConditional(coef, self.basis, step_index, resid,
                                     warning=self.warning, out_shape=out_shape,
                                     _evaluator=_ConstantEvaluator(mean))
        rhs = self._design.T @ tsel
        coef_std = np.linalg.solve(self._gram_reg, rhs)
        resid = float(np.sqrt(np.mean((self._design @ coef_std - tsel) ** 2)))
        if self.basis.kind == "polynomial":
            evaluator = _PolynomialEvaluator(coef_std, self.exps, self.center,
                                             self.scale, self.lo, self.hi)
            coef = _standardized_to_raw(coef_std, self.exps, self.center, self.scale)
        else:
            evaluator = _HatEvaluator(self.knots, coef_std)
            coef = coef_std
        return FittedConditional(coef, self.basis, step_index, resid,
                                 warning=self.warning, out_shape=out_shape,
                                 _evaluator=evaluator)


def fit_conditional(state_at_k: np.ndarray, target: np.ndarray,
                    basis: RegressionBasis, step_index: int = 0,
                    fit_window: tuple | None = None) -> FittedConditional:
    """Least-squares projection of per-path payoffs onto basis functions of the state.

    Parameters
    ----------
    state_at_k : (P,) or (P, state_dim) conditioning states
    target : (P,) or (P, m) payoffs
    basis : RegressionBasis
    fit_window : optional (lo, hi) box restricting the design region

    Returns
    -------
    FittedConditional whose ``evaluate`` gives the fitted conditional mean.
    """
    state_at_k = np.asarray(state_at_k, dtype=float)
    P = state_at_k.shape[0]
    tgt = np.asarray(target, dtype=float)
    if tgt.shape[0] != P:
        raise InvalidArgumentError("state and target path counts differ")
    if P < MIN_PATHS_PER_FUNCTION * basis.n_functions:
        raise InvalidArgumentError(
            f"need at least {MIN_PATHS_PER_FUNCTION * basis.n_functions} paths "
            f"for {basis.n_functions} basis functions, got {P}")
    return StepRegression(state_at_k, basis, fit_window).fit(tgt, step_index)


def extract_density(martingale_increment: np.ndarray, brownian_increment: np.ndarray,
                    state_at_k: np.ndarray, basis: RegressionBasis, dt: float,
                    step_index: int = 0, fit_window: tuple | None = None) -> FittedConditional:
    """Estimate the martingale-representation integrand at one step.

    Regresses increment * dB / dt componentwise on basis functions of the
    state (the conditional-covariance identity for Ito integrands). The result
    evaluates to an (n, d) matrix per path.
    """
    dM = np.asarray(martingale_increment, dtype=float)
    if dM.ndim == 1:
        dM = dM[:, None]
    dB = np.asarray(brownian_increment, dtype=float)
    if dB.ndim == 1:
        dB = dB[:, None]
    if dM.shape[0] != dB.shape[0]:
        raise InvalidArgumentError("increment path counts differ")
    if not (dt > 0):
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    P, n = dM.shape
    d = dB.shape[1]
    target = (dM[:, :, None] * dB[:, None, :] / dt).reshape(P, n * d)
    fit = fit_conditional(state_at_k, target, basis, step_index, fit_window)
    fit.out_shape = (n, d)
    return fit


# ---------------------------------------------------------------------------
# exact lattice oracle
# ---------------------------------------------------------------------------

MAX_TREE_DEPTH = 20


@dataclass
class TreeOracle:
    """Recombining +-sqrt(dt) lattice: exact, enumerable stand-in for a Brownian motion.

    Increments are Rademacher with magnitude sqrt(dt) per dimension, matching
    Brownian mean and variance exactly at every step.
    """

    depth: int
    dt: float
    dim: int = 1
    x0: float = 0.0

    def __post_init__(self):
        if not (0 < self.depth <= MAX_TREE_DEPTH):
            raise InvalidArgumentError(
                f"depth must be in [1, {MAX_TREE_DEPTH}], got {self.depth}")
        if not (self.dt > 0):
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        if self.dim < 1:
            raise InvalidArgumentError(f"dim must be >= 1, got {self.dim}")

    def level_states(self, level: int) -> np.ndarray:
        """States at a level, shape (level+1,)*dim + (dim,)."""
        step = math.sqrt(self.dt)
        axis = self.x0 + step * (2.0 * np.arange(level + 1) - level)
        grids = np.meshgrid(*([axis] * self.dim), indexing="ij")
        return np.stack(grids, axis=-1)


def oracle_conditional(tree: TreeOracle, payoff, step_index: int) -> np.ndarray:
    """Exact conditional expectation of payoff(X_T) at every level-k node.

    Backward induction over the full outcome set; children in each dimension
    are equally likely. payoff maps (N, dim) states to (N,) or (N, m) values.
    """
    if not (0 <= step_index <= tree.depth):
        raise InvalidArgumentError(f"step_index out of range: {step_index}")
    states = tree.level_states(tree.depth)
    flat = states.reshape(-1, tree.dim)
    vals = np.asarray(payoff(flat), dtype=float)
    squeeze = vals.ndim == 1
    if squeeze:
        vals = vals[:, None]
    vals = vals.reshape(states.shape[:-1] + (vals.shape[-1],))
    for level in range(tree.depth - 1, step_index - 1, -1):
        nxt = vals
        shape = (level + 1,) * tree.dim + (nxt.shape[-1],)
        vals = np.zeros(shape)
        # average the 2^dim children: index i_j -> {i_j, i_j + 1}
        for combo in np.ndindex(*([2] * tree.dim)):
            sl = tuple(slice(c, c + level + 1) for c in combo)
            vals += nxt[sl]
        vals /= 2 ** tree.dim
    return vals[..., 0] if squeeze else vals
