"""Linear functionals of the coefficient process and their confidence sets.

A FunctionalSpec materializes loadings ell(w) so that
theta_hat(u, w) = ell(w)' beta_hat(u). TStatProcess couples the
estimates with draws of the scaled process; pointwise intervals and
uniform bands follow by plugging critical values into
theta_hat +- c * sigma_hat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np
from scipy.stats import norm

from .basis import (
    eval_basis_derivative_matrix,
    eval_basis_matrix,
    loading_average_derivative,
)
from .couplings import ProcessDraws
from .errors import NumericalError, UserInputError
from .process import CoefficientProcess


class FunctionalKind(Enum):
    Value = "value"
    Derivative = "derivative"
    AverageDerivative = "average_derivative"
    ConditionalAverageDerivative = "conditional_average_derivative"


class CriticalRule(Enum):
    NormalQuantile = "normal"
    CouplingQuantile = "coupling"


@dataclass(frozen=True)
class FunctionalSpec:
    """Loadings for a linear functional over an index set of (u, w) pairs.

    us is the quantile part of the index set (None means the full fitting
    grid); ws holds the distinct covariate points, or None for averaged
    functionals whose single loading has no w argument.
    """

    kind: FunctionalKind
    loadings: np.ndarray        # (n_w, m)
    us: np.ndarray | None = None
    ws: np.ndarray | None = None
    k: int | None = None

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.loadings, dtype=np.float64))
        if L.size == 0:
            raise UserInputError("functional index set is empty")
        object.__setattr__(self, "loadings", L)
        if self.us is not None:
            us = np.asarray(self.us, dtype=np.float64)
            if us.size == 0:
                raise UserInputError("functional index set is empty")
            object.__setattr__(self, "us", us)

    @property
    def n_w(self) -> int:
        return self.loadings.shape[0]


def value_functional(basis, ws, us=None) -> FunctionalSpec:
    """theta(u, w) = conditional quantile value at each covariate point."""
    ws = np.atleast_2d(np.asarray(ws, dtype=np.float64))
    return FunctionalSpec(FunctionalKind.Value, eval_basis_matrix(basis, ws), us, ws)


def derivative_functional(basis, k, ws, us=None) -> FunctionalSpec:
    """theta(u, w) = partial derivative of the quantile in covariate k."""
    ws = np.atleast_2d(np.asarray(ws, dtype=np.float64))
    L = eval_basis_derivative_matrix(basis, ws, k)
    return FunctionalSpec(FunctionalKind.Derivative, L, us, ws, k)


def average_derivative_functional(basis, sample, k, us=None, mu=None) -> FunctionalSpec:
    """theta(u) = derivative in covariate k averaged over the sample measure."""
    ell = loading_average_derivative(basis, sample, k, mu=mu)
    return FunctionalSpec(FunctionalKind.AverageDerivative, ell[None, :], us, None, k)


def conditional_average_derivative_functional(basis, sample, k, weights, us=None) -> FunctionalSpec:
    """Average derivative under a reweighted (conditional) sample measure."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] != np.atleast_2d(sample).shape[0]:
        raise UserInputError("conditioning weights must align with the sample rows")
    total = weights.sum()
    if not np.isfinite(total) or total <= 0:
        raise UserInputError("conditioning weights must have a positive finite sum")
    ell = loading_average_derivative(basis, sample, k, mu=weights / total)
    return FunctionalSpec(
        FunctionalKind.ConditionalAverageDerivative, ell[None, :], us, None, k
    )


@dataclass(frozen=True)
class TStatProcess:
    """Estimates, standard errors, and coupled t* draws over the index set."""

    theta_hat: np.ndarray      # (n_u, n_w)
    sigma_hat: np.ndarray      # (n_u, n_w)
    draws_t: np.ndarray        # (B, n_u, n_w)
    us: np.ndarray
    ws: np.ndarray | None
    spec: FunctionalSpec
    n: int
    method: str
    seed: int

    def __post_init__(self):
        if not np.all(self.sigma_hat > 0):
            raise NumericalError("sigma_hat must be positive over the whole index set")

    @property
    def B(self) -> int:
        return self.draws_t.shape[0]


def sigma_hat(proc: CoefficientProcess, ell, u) -> float:
    """Standard error sqrt(u(1-u) ell' Jinv Sigma Jinv ell / n) at one grid point."""
    ell = np.asarray(ell, dtype=np.float64)
    if not np.any(ell != 0.0):
        raise UserInputError("degenerate functional: the loading vector is zero")
    g = proc.grid.index_of(u)
    jinv = proc.jacobian_inverses[g]
    v = jinv @ ell
    var = u * (1.0 - u) * (v @ proc.gram @ v) / proc.n
    if var <= 0:
        raise NumericalError(f"nonpositive variance {var:g} at u={u:g}")
    return float(np.sqrt(var))


def t_star_process(proc: CoefficientProcess, draws: ProcessDraws, spec: FunctionalSpec) -> TStatProcess:
    """Couple theta_hat with draws: t*_b = ell' draw_b(u) / (sqrt(n) sigma_hat)."""
    if draws.n != proc.n or not np.array_equal(draws.grid.points, proc.grid.points):
        raise UserInputError("draws and process disagree on the grid or sample size")
    us = proc.grid.points if spec.us is None else spec.us
    gidx = np.array([proc.grid.index_of(u) for u in us])
    L = spec.loadings
    if L.shape[1] != proc.m:
        raise UserInputError(f"loadings have length {L.shape[1]}, expected m={proc.m}")
    if not np.all(np.any(L != 0.0, axis=1)):
        raise UserInputError("degenerate functional: the loading vector is zero")
    theta = proc.betas[gidx] @ L.T
    uu = us[:, None]
    proj = np.einsum("gij,wj->gwi", proc.jacobian_inverses[gidx], L)
    var = uu * (1.0 - uu) * np.einsum("gwi,ij,gwj->gw", proj, proc.gram, proj) / proc.n
    if np.any(var <= 0):
        raise NumericalError("nonpositive variance over the index set")
    sigma = np.sqrt(var)
    tvals = np.einsum("bgj,wj->bgw", draws.draws[:, gidx, :], L) / (np.sqrt(proc.n) * sigma)
    return TStatProcess(
        theta_hat=theta,
        sigma_hat=sigma,
        draws_t=tvals,
        us=us,
        ws=spec.ws,
        spec=spec,
        n=proc.n,
        method=draws.method.value,
        seed=draws.seed,
    )


@dataclass(frozen=True)
class ConfidenceBand:
    """Pointwise or uniform confidence set theta_hat +- c_n sigma_hat."""

    lower: np.ndarray
    upper: np.ndarray
    critical_value: float | np.ndarray
    k_n: float | np.ndarray
    delta_n: float
    alpha: float
    method: str
    theta_hat: np.ndarray = field(default=None, repr=False)
    sigma_hat: np.ndarray = field(default=None, repr=False)
    us: np.ndarray = field(default=None, repr=False)
    ws: np.ndarray | None = field(default=None, repr=False)
    B: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if np.any(self.lower > self.upper):
            raise NumericalError("confidence band has lower > upper")

    def covers(self, truth) -> np.ndarray:
        """Pointwise indicator that truth lies inside [lower, upper]."""
        truth = np.asarray(truth, dtype=np.float64)
        return (self.lower <= truth) & (truth <= self.upper)


def empirical_quantile(values, p) -> float:
    """Order statistic at rank ceil(p * B): smallest value with ECDF >= p.

    The rank is computed in exact rational arithmetic on the decimal
    rendering of p so that, e.g., p=0.95 with B=10,000 yields rank 9,500
    rather than drifting one past it through float rounding.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise UserInputError("empirical_quantile needs a nonempty sample")
    if not 0.0 < p < 1.0:
        raise UserInputError(f"p must lie in (0,1), got {p}")
    rank = math.ceil(Fraction(str(p)) * values.size)
    return float(np.sort(values)[rank - 1])


def delta_n(n) -> float:
    """Uniform-band widening 1/(4 (log n)^{3/4})."""
    if n < 2:
        raise UserInputError("delta_n requires n >= 2")
    return 1.0 / (4.0 * math.log(n) ** 0.75)


def _require_quantile_resolution(B, alpha):
    if Fraction(str(alpha)) * B < 1:
        raise UserInputError(
            f"B={B} draws cannot resolve the 1-{alpha} quantile (need B*alpha >= 1)"
        )


def _assemble_band(tstat, k_n, dn, alpha, method):
    c = k_n + dn
    hw = c * tstat.sigma_hat
    lower = tstat.theta_hat - hw
    upper = lower + 2.0 * hw
    return ConfidenceBand(
        lower=lower,
        upper=upper,
        critical_value=c,
        k_n=k_n,
        delta_n=dn,
        alpha=alpha,
        method=method,
        theta_hat=tstat.theta_hat,
        sigma_hat=tstat.sigma_hat,
        us=tstat.us,
        ws=tstat.ws,
        B=tstat.B,
        seed=tstat.seed,
    )


def pointwise_interval(
    tstat: TStatProcess, alpha, critical: CriticalRule = CriticalRule.NormalQuantile
) -> ConfidenceBand:
    """Pointwise (1-alpha) intervals theta_hat +- k_n sigma_hat.

    k_n is the standard normal 1-alpha/2 quantile, or per-point empirical
    1-alpha quantiles of |t*| over the coupled draws.
    """
    if not 0.0 < alpha < 1.0:
        raise UserInputError(f"alpha must lie in (0,1), got {alpha}")
    if critical is CriticalRule.NormalQuantile:
        k_n = float(norm.ppf(1.0 - alpha / 2.0))
    elif critical is CriticalRule.CouplingQuantile:
        _require_quantile_resolution(tstat.B, alpha)
        absd = np.abs(tstat.draws_t)
        k_n = np.empty_like(tstat.theta_hat)
        for g in range(k_n.shape[0]):
            for w in range(k_n.shape[1]):
                k_n[g, w] = empirical_quantile(absd[:, g, w], 1.0 - alpha)
    else:
        raise UserInputError(f"unknown critical rule {critical!r}")
    return _assemble_band(tstat, k_n, 0.0, alpha, f"pointwise-{critical.value}")


def uniform_band(tstat: TStatProcess, alpha, n=None) -> ConfidenceBand:
    """Uniform (1-alpha) band with c_n = k_n + delta_n.

    k_n is the empirical 1-alpha quantile of sup over the index set of
    |t*_b|; delta_n = 1/(4 (log n)^{3/4}) guards the coupling error.
    """
    if not 0.0 < alpha < 1.0:
        raise UserInputError(f"alpha must lie in (0,1), got {alpha}")
    n = tstat.n if n is None else n
    _require_quantile_resolution(tstat.B, alpha)
    sup_t = np.max(np.abs(tstat.draws_t), axis=(1, 2))
    k_n = empirical_quantile(sup_t, 1.0 - alpha)
    return _assemble_band(tstat, k_n, delta_n(n), alpha, "uniform")
