"""Series quantile regression: conditional quantile processes, strong
coupling inference, uniform confidence bands, and monotonization.

The estimation core solves weighted, linearly perturbed quantile
regressions over a quantile grid through an interior point method with
vertex crossover. Inference on linear functionals of the coefficient
process runs through four exchangeable coupling constructions (pivotal,
Gaussian, weighted bootstrap, gradient bootstrap) feeding pointwise
intervals and uniform bands. A simulation lab measures coverage and
approximation error on a synthetic location-shift design.
"""

from .artifact import data_hash, load_process, save_process
from .basis import (
    BasisSpec,
    eval_basis_derivative_matrix,
    eval_basis_matrix,
    make_basis,
)
from .couplings import (
    CouplingMethod,
    GradientVia,
    ProcessDraws,
    brownian_bridge_draws,
    draw_gaussian,
    draw_gradient_bootstrap,
    draw_pivotal,
    draw_weighted_bootstrap,
    score_process_draws,
)
from .config import load_config, resolve_grid, schema_for, validate_config
from .errors import NumericalError, UserInputError
from .inference import (
    ConfidenceBand,
    CriticalRule,
    FunctionalKind,
    FunctionalSpec,
    TStatProcess,
    average_derivative_functional,
    conditional_average_derivative_functional,
    delta_n,
    derivative_functional,
    empirical_quantile,
    pointwise_interval,
    sigma_hat,
    t_star_process,
    uniform_band,
    value_functional,
)
from .monotone import (
    GridFunction,
    RearrangeMode,
    convex_combination,
    intersect_monotone,
    isotonic_project,
    monotonize_band,
    rearrange_1d,
    rearrange_multi,
    reflected,
)
from .process import (
    CoefficientProcess,
    QuantileGrid,
    default_grid,
    estimate_gram,
    estimate_jacobian,
    fit_process,
    hall_sheather_bandwidth,
    powell_bandwidth,
)
from .qr import (
    Dataset,
    QrFit,
    brute_force_oracle,
    certificate,
    certificate_bound,
    solve_qr,
)
from .simlab import (
    DgpSpec,
    McReport,
    SimSample,
    estimand_gap,
    generate_dgp,
    run_mc,
    true_average_derivative,
)

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "CoefficientProcess",
    "ConfidenceBand",
    "CouplingMethod",
    "CriticalRule",
    "Dataset",
    "DgpSpec",
    "FunctionalKind",
    "FunctionalSpec",
    "GradientVia",
    "GridFunction",
    "McReport",
    "NumericalError",
    "ProcessDraws",
    "QrFit",
    "QuantileGrid",
    "RearrangeMode",
    "SimSample",
    "TStatProcess",
    "UserInputError",
    "average_derivative_functional",
    "brownian_bridge_draws",
    "brute_force_oracle",
    "certificate",
    "certificate_bound",
    "conditional_average_derivative_functional",
    "convex_combination",
    "data_hash",
    "default_grid",
    "delta_n",
    "derivative_functional",
    "draw_gaussian",
    "draw_gradient_bootstrap",
    "draw_pivotal",
    "draw_weighted_bootstrap",
    "empirical_quantile",
    "estimand_gap",
    "estimate_gram",
    "estimate_jacobian",
    "eval_basis_derivative_matrix",
    "eval_basis_matrix",
    "fit_process",
    "generate_dgp",
    "hall_sheather_bandwidth",
    "intersect_monotone",
    "isotonic_project",
    "load_config",
    "load_process",
    "make_basis",
    "monotonize_band",
    "pointwise_interval",
    "powell_bandwidth",
    "rearrange_1d",
    "rearrange_multi",
    "reflected",
    "resolve_grid",
    "run_mc",
    "save_process",
    "schema_for",
    "score_process_draws",
    "sigma_hat",
    "solve_qr",
    "t_star_process",
    "true_average_derivative",
    "uniform_band",
    "validate_config",
    "value_functional",
]
