"""Forward-backward SDE solver via a functional reformulation.

The solver treats the backward pair (Y, Z) as conditional-expectation
functionals of the finite-variation/forward pair (V, X), iterates the
resulting fixed-point map on contraction-compliant windows, and glues windows
into a global solution in a single forward pass. A nonlinear change of
measure then turns the solved system into a weak solution of a quadratic
backward equation, which drives the exponential-utility portfolio module.
"""

from .errors import (FdeflowError, InsufficientWeightError, InvalidArgumentError,
                     InvalidStateError, PicardDivergedError)
from .grid import (BrownianEnsemble, ContractionBudget, TimeGrid,
                   build_contraction_partition, build_uniform_grid,
                   contraction_window_length, load_ensemble, sample_ensemble,
                   save_ensemble, segment_windows)
from .regression import (FittedConditional, RegressionBasis, TreeOracle,
                         extract_density, fit_conditional, oracle_conditional,
                         polynomial_basis, quantile_linear_basis)
from .fde import (CoefficientSet, FdeSolution, PicardReport, ResidualReport,
                  check_fbsde_residual, empirical_pathwise_uniqueness,
                  export_solution, picard_window, solve_global)
from .girsanov import (MeasureChange, WeakSolution, assemble_weak_solution,
                       bmo_diagnostic, build_measure_change, check_z_invariance,
                       export_weak_solution)
from .portfolio import (MarketModel, PortfolioSolution, build_portfolio_fbsde,
                        export_portfolio_results, solve_portfolio,
                        verify_martingale_optimality)
from .fixtures import FIXTURES, Fixture, get_fixture

__version__ = "0.1.0"

__all__ = [
    "FdeflowError", "InvalidArgumentError", "InvalidStateError",
    "InsufficientWeightError", "PicardDivergedError",
    "TimeGrid", "ContractionBudget", "BrownianEnsemble",
    "build_uniform_grid", "build_contraction_partition",
    "contraction_window_length", "segment_windows",
    "sample_ensemble", "save_ensemble", "load_ensemble",
    "RegressionBasis", "FittedConditional", "TreeOracle",
    "fit_conditional", "extract_density", "oracle_conditional",
    "polynomial_basis", "quantile_linear_basis",
    "CoefficientSet", "FdeSolution", "PicardReport", "ResidualReport",
    "picard_window", "solve_global", "check_fbsde_residual",
    "empirical_pathwise_uniqueness", "export_solution",
    "MeasureChange", "WeakSolution", "build_measure_change",
    "assemble_weak_solution", "check_z_invariance", "bmo_diagnostic",
    "export_weak_solution",
    "MarketModel", "PortfolioSolution", "build_portfolio_fbsde",
    "solve_portfolio", "verify_martingale_optimality", "export_portfolio_results",
    "FIXTURES", "Fixture", "get_fixture",
]
