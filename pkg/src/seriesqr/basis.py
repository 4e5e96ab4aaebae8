"""Series bases: evaluation, derivatives, and integrated loadings.

A basis maps a covariate vector x = (w, v_1, ..., v_q) into the regressor
vector Z(x) of length m. The first covariate w enters through one of
three nonlinear families (linear, orthogonalized power polynomial, cubic
B-spline with knots at empirical quantiles); the remaining q covariates
enter linearly and untransformed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import UserInputError

FAMILIES = ("linear", "power", "bspline")
DEFAULT_KNOT_QUANTILES = (0.0, 0.25, 0.5, 0.75, 1.0)
ZETA_GRID_SIZE = 10_001
KNOT_NUDGE_REL = 1e-9


@dataclass(frozen=True)
class BasisSpec:
    """Immutable description of a fitted series basis.

    Fields
    ------
    family : one of FAMILIES.
    params : the constructor parameters, echoed for serialization.
    covariate_ranges : (1+q, 2) per-dimension [min, max] of the sample the
        basis was built on; row 0 is the nonlinear covariate w.
    extra_linear_covariates : q, the count of linearly entering covariates.
    includes_intercept : True when term 0 is the constant function 1. The
        B-spline block spans constants without a separate intercept term.
    m : total term count (nonlinear block plus q).
    degree : polynomial degree of the nonlinear block (0 for linear family).
    knots : full clamped knot vector (B-spline family only).
    transition : (degree+1, degree+1) map from raw monomials in the
        normalized covariate to the stored polynomial terms (power family).
    zeta_m : sup-norm bound on ||Z(x)|| over the covariate ranges, computed
        on a dense grid with a small safety margin.
    """

    family: str
    params: dict
    covariate_ranges: np.ndarray
    extra_linear_covariates: int
    includes_intercept: bool
    m: int
    degree: int = 0
    knots: np.ndarray | None = None
    transition: np.ndarray | None = None
    zeta_m: float = field(default=float("nan"))

    @property
    def m_nonlinear(self) -> int:
        return self.m - self.extra_linear_covariates


def _as_sample(covariate_sample):
    x = np.asarray(covariate_sample, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise UserInputError("covariate sample must be a nonempty vector or matrix")
    if not np.all(np.isfinite(x)):
        raise UserInputError("covariate sample contains non-finite values")
    return x


def _normalize(spec: BasisSpec, w):
    """Map w affinely so the construction range becomes [-1, 1]."""
    lo, hi = spec.covariate_ranges[0]
    return (2.0 * w - (lo + hi)) / (hi - lo)


def _power_matrix(t, degree):
    return np.vander(np.asarray(t, dtype=np.float64), degree + 1, increasing=True)


def _power_deriv_matrix(t, degree):
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros((t.size, degree + 1))
    for j in range(1, degree + 1):
        out[:, j] = j * t ** (j - 1)
    return out


def _build_power(w, params):
    degree = int(params.get("degree", 6))
    if degree < 1:
        raise UserInputError("power basis degree must be >= 1")
    raw = bool(params.get("raw", False))
    lo, hi = float(np.min(w)), float(np.max(w))
    if hi <= lo:
        raise UserInputError("nonlinear covariate is constant; power basis undefined")
    t = (2.0 * w - (lo + hi)) / (hi - lo)
    if raw:
        transition = np.eye(degree + 1)
    else:
        # Gram-Schmidt against the empirical measure of the construction
        # sample, via a thin QR of the scaled monomial matrix.
        monomials = _power_matrix(t, degree)
        qmat, rmat = np.linalg.qr(monomials / np.sqrt(len(t)))
        diag = np.diag(rmat)
        if np.min(np.abs(diag)) < 1e-12 * np.max(np.abs(diag)):
            raise UserInputError(
                "covariate sample too degenerate to orthogonalize degree "
                f"{degree} polynomials"
            )
        signs = np.where(diag >= 0.0, 1.0, -1.0)
        transition = np.linalg.solve(rmat, np.diag(signs))
    return degree, transition


def _build_bspline(w, params):
    degree = int(params.get("degree", 3))
    if degree < 1:
        raise UserInputError("B-spline degree must be >= 1")
    if "n_knots" in params and "knot_quantiles" not in params:
        k = int(params["n_knots"])
        if k < 2:
            raise UserInputError("n_knots counts boundary knots too and must be >= 2")
        quantiles = np.linspace(0.0, 1.0, k)
    else:
        quantiles = np.asarray(params.get("knot_quantiles", DEFAULT_KNOT_QUANTILES), dtype=np.float64)
    if quantiles.size < 2 or np.any(np.diff(quantiles) <= 0) or quantiles[0] < 0 or quantiles[-1] > 1:
        raise UserInputError("knot_quantiles must be strictly increasing within [0, 1]")
    knots = np.quantile(w, quantiles)
    wrange = float(np.max(w) - np.min(w))
    if np.any(np.diff(knots) <= 0):
        if wrange <= 0:
            colliding = [f"{q:g}" for q, d in zip(quantiles[1:], np.diff(knots)) if d <= 0]
            raise UserInputError(
                "duplicate B-spline knots after quantile placement at quantiles "
                + ", ".join(colliding)
            )
        nudge = KNOT_NUDGE_REL * wrange
        for i in range(1, knots.size):
            if knots[i] <= knots[i - 1]:
                knots[i] = knots[i - 1] + nudge
        warnings.warn("colliding B-spline knots nudged apart", RuntimeWarning)
    full = np.concatenate(
        [np.full(degree + 1, knots[0]), knots[1:-1], np.full(degree + 1, knots[-1])]
    )
    return degree, full


def make_basis(family, params, covariate_sample) -> BasisSpec:
    """Construct a BasisSpec from a covariate sample.

    Parameters
    ----------
    family : "linear", "power", or "bspline".
    params : family parameters. Power: {"degree": int, "raw": bool}.
        B-spline: {"degree": int} with knots placed either at
        "knot_quantiles" (sequence) or at "n_knots" equally spaced
        quantiles. Linear: {}.
    covariate_sample : (n,) array of w, or (n, 1+q) array whose first
        column is w and whose remaining columns enter linearly.
    """
    if family not in FAMILIES:
        raise UserInputError(f"unknown basis family {family!r}; expected one of {FAMILIES}")
    params = dict(params or {})
    x = _as_sample(covariate_sample)
    w = x[:, 0]
    q = x.shape[1] - 1
    ranges = np.column_stack([x.min(axis=0), x.max(axis=0)])

    degree, knots, transition = 0, None, None
    if family == "linear":
        m_w, intercept = 2, True
    elif family == "power":
        degree, transition = _build_power(w, params)
        m_w, intercept = degree + 1, True
    else:
        degree, knots = _build_bspline(w, params)
        m_w, intercept = knots.size - degree - 1, False

    spec = BasisSpec(
        family=family,
        params=params,
        covariate_ranges=ranges,
        extra_linear_covariates=q,
        includes_intercept=intercept,
        m=m_w + q,
        degree=degree,
        knots=knots,
        transition=transition,
    )
    object.__setattr__(spec, "zeta_m", _zeta_bound(spec))
    return spec


def _nonlinear_block(spec: BasisSpec, w):
    w = np.asarray(w, dtype=np.float64)
    if spec.family == "linear":
        return np.column_stack([np.ones_like(w), w])
    if spec.family == "power":
        return _power_matrix(_normalize(spec, w), spec.degree) @ spec.transition
    return BSpline.design_matrix(w, spec.knots, spec.degree, extrapolate=True).toarray()


def _nonlinear_block_deriv(spec: BasisSpec, w):
    w = np.asarray(w, dtype=np.float64)
    if spec.family == "linear":
        return np.column_stack([np.zeros_like(w), np.ones_like(w)])
    if spec.family == "power":
        lo, hi = spec.covariate_ranges[0]
        scale = 2.0 / (hi - lo)
        return scale * _power_deriv_matrix(_normalize(spec, w), spec.degree) @ spec.transition
    m_w = spec.m_nonlinear
    cols = np.empty((w.size, m_w))
    for j in range(m_w):
        coef = np.zeros(m_w)
        coef[j] = 1.0
        cols[:, j] = BSpline(spec.knots, coef, spec.degree, extrapolate=True).derivative(1)(w)
    return cols


def eval_basis_matrix(spec: BasisSpec, x):
    """Evaluate Z at each row of x; returns an (n, m) design matrix."""
    x = _as_sample(x)
    if x.shape[1] != 1 + spec.extra_linear_covariates:
        raise UserInputError(
            f"expected {1 + spec.extra_linear_covariates} covariate columns, got {x.shape[1]}"
        )
    block = _nonlinear_block(spec, x[:, 0])
    if spec.extra_linear_covariates:
        return np.column_stack([block, x[:, 1:]])
    return block


def eval_basis(spec: BasisSpec, x):
    """Evaluate the m series terms at a single covariate point."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return eval_basis_matrix(spec, x[None, :])[0]


def eval_basis_derivative_matrix(spec: BasisSpec, x, k):
    """Row-wise derivative of Z with respect to covariate k (0 is w)."""
    x = _as_sample(x)
    q = spec.extra_linear_covariates
    if not 0 <= k <= q:
        raise UserInputError(f"covariate index {k} out of range for q={q}")
    n = x.shape[0]
    if k == 0:
        block = _nonlinear_block_deriv(spec, x[:, 0])
        if q:
            return np.column_stack([block, np.zeros((n, q))])
        return block
    out = np.zeros((n, spec.m))
    out[:, spec.m_nonlinear + k - 1] = 1.0
    return out


def eval_basis_derivative(spec: BasisSpec, x, k):
    """Derivative of the series terms at a single point."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return eval_basis_derivative_matrix(spec, x[None, :], k)[0]


def extrapolation_mask(spec: BasisSpec, x):
    """True for rows whose w lies outside the construction range."""
    x = _as_sample(x)
    lo, hi = spec.covariate_ranges[0]
    return (x[:, 0] < lo) | (x[:, 0] > hi)


def loading_average_derivative(spec: BasisSpec, sample, k, mu=None):
    """Loading of the average-derivative functional under measure mu.

    Returns ell = sum_j mu_j * d_k Z(x_j). With mu=None the empirical
    measure of the sample is used. Restricting mu to a subsample with
    renormalized weights gives the conditional average derivative.
    """
    deriv = eval_basis_derivative_matrix(spec, sample, k)
    n = deriv.shape[0]
    if mu is None:
        mu = np.full(n, 1.0 / n)
    else:
        mu = np.asarray(mu, dtype=np.float64)
        if mu.shape != (n,):
            raise UserInputError("mu must have one weight per sample row")
        if abs(mu.sum() - 1.0) > 1e-10:
            raise UserInputError(f"mu weights sum to {mu.sum():.12g}, not 1 within 1e-10")
    return mu @ deriv


def _zeta_bound(spec: BasisSpec) -> float:
    lo, hi = spec.covariate_ranges[0]
    w_grid = np.linspace(lo, hi, ZETA_GRID_SIZE) if hi > lo else np.array([lo])
    block = _nonlinear_block(spec, w_grid)
    sq = np.sum(block**2, axis=1)
    if spec.extra_linear_covariates:
        v_abs = np.max(np.abs(spec.covariate_ranges[1:]), axis=1)
        sq = sq + np.sum(v_abs**2)
    # small margin so the reported value upper-bounds off-grid evaluations
    return float(np.sqrt(np.max(sq)) * (1.0 + 1e-9))


def basis_to_payload(spec: BasisSpec):
    """Split a BasisSpec into a JSON-safe dict and exact float arrays."""
    meta = {
        "family": spec.family,
        "params": spec.params,
        "extra_linear_covariates": spec.extra_linear_covariates,
        "includes_intercept": spec.includes_intercept,
        "m": spec.m,
        "degree": spec.degree,
    }
    arrays = {"covariate_ranges": spec.covariate_ranges, "zeta_m": np.array([spec.zeta_m])}
    if spec.knots is not None:
        arrays["knots"] = spec.knots
    if spec.transition is not None:
        arrays["transition"] = spec.transition
    return meta, arrays


def basis_from_payload(meta, arrays) -> BasisSpec:
    """Inverse of basis_to_payload; reconstruction is bit-exact."""
    return BasisSpec(
        family=meta["family"],
        params=dict(meta["params"]),
        covariate_ranges=np.asarray(arrays["covariate_ranges"], dtype=np.float64),
        extra_linear_covariates=int(meta["extra_linear_covariates"]),
        includes_intercept=bool(meta["includes_intercept"]),
        m=int(meta["m"]),
        degree=int(meta["degree"]),
        knots=np.asarray(arrays["knots"], dtype=np.float64) if "knots" in arrays else None,
        transition=np.asarray(arrays["transition"], dtype=np.float64)
        if "transition" in arrays
        else None,
        zeta_m=float(np.asarray(arrays["zeta_m"]).ravel()[0]),
    )
