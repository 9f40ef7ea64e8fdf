"""Time discretization, contraction-compliant partitioning, and Brownian ensembles.

The Brownian sampler is counter-based: path ``i`` always consumes the raw
Philox outputs ``[i*K*dim, (i+1)*K*dim)``, so a path's increments depend only
on ``(seed, i, K, dim)`` and never on how many paths are drawn alongside it.
Normals come from the inverse CDF applied to those raw 64-bit words, which
keeps the counter alignment exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import InvalidArgumentError

ENSEMBLE_MAGIC = "FDEB1"


@dataclass
class TimeGrid:
    """Ordered time points t_0 < t_1 < ... < t_K.

    Grids produced by the public constructors start at 0; window views carry
    the absolute times of their slice.
    """

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 1 or self.points.size < 2:
            raise InvalidArgumentError("grid needs at least two points")
        if not np.all(np.diff(self.points) > 0):
            raise InvalidArgumentError("grid points must be strictly increasing")
        if not np.all(np.isfinite(self.points)):
            raise InvalidArgumentError("grid points must be finite")

    @property
    def num_steps(self) -> int:
        return self.points.size - 1

    @property
    def horizon(self) -> float:
        return float(self.points[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.points)

    @property
    def mesh(self) -> float:
        return float(self.dt.max())

    def window(self, start: int, stop: int) -> "TimeGrid":
        """Sub-grid over step indices [start, stop]; keeps absolute times."""
        if not (0 <= start < stop <= self.num_steps):
            raise InvalidArgumentError(f"bad window indices ({start}, {stop})")
        return TimeGrid(self.points[start:stop + 1].copy())


@dataclass
class ContractionBudget:
    """Lipschitz data controlling the admissible window length.

    ``c1`` bounds the drivers, ``c_grad`` bounds the gradient of the fitted
    value maps (falls back to the terminal Lipschitz constant when solving a
    single interval).
    """

    c1: float
    c_grad: float = 0.0

    def __post_init__(self):
        if not (self.c1 > 0):
            raise InvalidArgumentError(f"c1 must be positive, got {self.c1}")
        if self.c_grad < 0:
            raise InvalidArgumentError(f"c_grad must be >= 0, got {self.c_grad}")

    @property
    def mesh_bound(self) -> float:
        """Largest admissible mesh: sqrt(mesh) <= 1/(8*c1*(1+c_grad)) and <= 1."""
        root = min(1.0 / (8.0 * self.c1 * (1.0 + self.c_grad)), 1.0)
        return root * root


def contraction_window_length(c1: float, c_grad: float) -> float:
    """Admissible window length for given Lipschitz data; 1 when c1 == 0."""
    if c1 < 0 or c_grad < 0:
        raise InvalidArgumentError("Lipschitz constants must be non-negative")
    if c1 == 0.0:
        return 1.0
    return ContractionBudget(c1, c_grad).mesh_bound


def build_uniform_grid(T: float, K: int) -> TimeGrid:
    """Uniform grid of K steps on [0, T]."""
    if not (T > 0):
        raise InvalidArgumentError(f"horizon must be positive, got {T}")
    if int(K) < 1 or int(K) != K:
        raise InvalidArgumentError(f"step count must be a positive integer, got {K}")
    return TimeGrid(np.linspace(0.0, float(T), int(K) + 1))


def build_contraction_partition(T: float, budget: ContractionBudget) -> TimeGrid:
    """Coarsest uniform grid whose mesh satisfies the contraction bound."""
    if not (T > 0):
        raise InvalidArgumentError(f"horizon must be positive, got {T}")
    bound = budget.mesh_bound
    K = max(1, math.ceil(T / bound - 1e-12))
    grid = build_uniform_grid(T, K)
    assert math.sqrt(grid.mesh) <= min(1.0 / (8.0 * budget.c1 * (1.0 + budget.c_grad)), 1.0) + 1e-12
    return grid


def segment_windows(grid: TimeGrid, max_length: float) -> list[tuple[int, int]]:
    """Split grid steps into contiguous windows of length <= max_length.

    Greedy left-to-right; every window holds at least one step, so a grid
    coarser than ``max_length`` yields single-step windows.
    """
    if not (max_length > 0):
        raise InvalidArgumentError("max_length must be positive")
    pts = grid.points
    windows = []
    a = 0
    while a < grid.num_steps:
        b = a + 1
        while b < grid.num_steps and pts[b + 1] - pts[a] <= max_length * (1 + 1e-12):
            b += 1
        windows.append((a, b))
        a = b
    return windows


@dataclass
class BrownianEnsemble:
    """Gaussian increments for num_paths independent d-dimensional motions.

    increments[i, k, j] ~ N(0, dt_k), laid out path-major, step-minor,
    dimension-innermost. Immutable after construction by convention.
    """

    grid: TimeGrid
    num_paths: int
    dim: int
    seed: int
    increments: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = (self.num_paths, self.grid.num_steps, self.dim)
        if self.increments.shape != expected:
            raise InvalidArgumentError(
                f"increment shape {self.increments.shape} != {expected}")

    def brownian_paths(self) -> np.ndarray:
        """Cumulative sums with a zero column prepended; shape (P, K+1, dim)."""
        P = self.num_paths
        out = np.zeros((P, self.grid.num_steps + 1, self.dim))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out


def _raw_to_normals(raw: np.ndarray) -> np.ndarray:
    # top 53 bits -> uniform on (0,1), then inverse normal CDF
    u = (raw >> np.uint64(11)).astype(np.float64) * (2.0 ** -53) + 2.0 ** -54
    return ndtri(u)


def sample_ensemble(grid: TimeGrid, num_paths: int, dim: int, seed: int) -> BrownianEnsemble:
    """Draw a Brownian increment ensemble on the grid, deterministic in seed."""
    if num_paths < 1:
        raise InvalidArgumentError(f"num_paths must be >= 1, got {num_paths}")
    if dim < 1:
        raise InvalidArgumentError(f"dim must be >= 1, got {dim}")
    K = grid.num_steps
    raw = np.random.Philox(key=int(seed)).random_raw(num_paths * K * dim)
    z = _raw_to_normals(raw).reshape(num_paths, K, dim)
    z *= np.sqrt(grid.dt)[None, :, None]
    return BrownianEnsemble(grid=grid, num_paths=num_paths, dim=dim,
                            seed=int(seed), increments=z)


def save_ensemble(ensemble: BrownianEnsemble, path) -> None:
    """Write an ensemble to a flat numeric file.

    Layout: one ASCII header line ``FDEB1 K num_paths dim seed``, then the
    K+1 grid points as little-endian float64, then the increments path-major,
    step-minor, dimension-innermost.
    """
    with open(path, "wb") as fh:
        header = f"{ENSEMBLE_MAGIC} {ensemble.grid.num_steps} {ensemble.num_paths} {ensemble.dim} {ensemble.seed}\n"
        fh.write(header.encode("ascii"))
        fh.write(ensemble.grid.points.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(ensemble.increments, dtype="<f8").tobytes())


def load_ensemble(path) -> BrownianEnsemble:
    """Read an ensemble written by save_ensemble."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 5 or header[0] != ENSEMBLE_MAGIC:
            raise InvalidArgumentError(f"not a {ENSEMBLE_MAGIC} ensemble file: {path}")
        K, num_paths, dim, seed = (int(v) for v in header[1:])
        pts = np.frombuffer(fh.read(8 * (K + 1)), dtype="<f8")
        inc = np.frombuffer(fh.read(8 * num_paths * K * dim), dtype="<f8")
    grid = TimeGrid(pts.copy())
    return BrownianEnsemble(grid=grid, num_paths=num_paths, dim=dim, seed=seed,
                            increments=inc.reshape(num_paths, K, dim).copy())
