"""Quantile-grid fitting and the matrix estimators used for inference.

fit_process solves the quantile regression at every grid point and
attaches the Gram matrix Sigma_hat = E_n[Z Z'] and the Powell kernel
Jacobian J_hat(u) = (1/2h) E_n[1{|Y - Z'beta(u)| <= h} Z Z']. The
window h per grid point is the Hall-Sheather quantile-index bandwidth
mapped into residual units (see powell_bandwidth).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import _solver
from ._linalg import sym_inverse, symmetrize
from .errors import NumericalError, UserInputError
from .qr import Dataset, QrFit, solve_qr

BANDWIDTH_ALPHA = 0.05
BANDWIDTH_CLIP = 0.99


@dataclass(frozen=True)
class QuantileGrid:
    """Strictly increasing quantile indices inside a compact subset of (0,1)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 1 or pts.size == 0:
            raise UserInputError("quantile grid must be a nonempty vector")
        if pts[0] <= 0.0 or pts[-1] >= 1.0 or np.any(np.diff(pts) <= 0):
            raise UserInputError("quantile grid must be strictly increasing within (0,1)")
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.points.size

    def index_of(self, u, tol=1e-12) -> int:
        idx = int(np.argmin(np.abs(self.points - u)))
        if abs(self.points[idx] - u) > tol:
            raise UserInputError(f"u={u} is not a grid point")
        return idx


def default_grid() -> QuantileGrid:
    """Quantile indices 0.10, 0.11, ..., 0.90 (step 0.01)."""
    return QuantileGrid(np.arange(10, 91) / 100.0)


@dataclass
class CoefficientProcess:
    """Fitted coefficient process with its inference matrices."""

    grid: QuantileGrid
    betas: np.ndarray          # (G, m)
    gram: np.ndarray           # (m, m)
    jacobians: np.ndarray      # (G, m, m)
    bandwidths: np.ndarray     # (G,)
    n: int
    basis: object = None
    dataset: Dataset | None = None
    objectives: np.ndarray | None = None
    certificates: np.ndarray | None = None
    jacobian_inverses: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.jacobian_inverses is None:
            self.jacobian_inverses = np.stack([sym_inverse(j) for j in self.jacobians])

    @property
    def m(self) -> int:
        return self.betas.shape[1]


def estimate_gram(dataset: Dataset):
    """Gram matrix (1/n) Z'Z, exactly symmetric."""
    return symmetrize(dataset.Zmat.T @ dataset.Zmat / dataset.n)


def hall_sheather_bandwidth(u, n, alpha=BANDWIDTH_ALPHA) -> float:
    """Hall-Sheather rule h = n^(-1/3) z_{1-a/2}^(2/3) [1.5 phi(q)^2/(2q^2+1)]^(1/3).

    q = Phi^{-1}(u). The result is clipped so [u-h, u+h] stays inside (0,1).
    """
    u = float(u)
    if not 0.0 < u < 1.0:
        raise UserInputError(f"u must lie in (0,1), got {u}")
    if n < 2:
        raise UserInputError("n must be at least 2")
    if not 0.0 < alpha < 1.0:
        raise UserInputError(f"alpha must lie in (0,1), got {alpha}")
    z = norm.ppf(1.0 - alpha / 2.0)
    q = norm.ppf(u)
    bracket = 1.5 * norm.pdf(q) ** 2 / (2.0 * q**2 + 1.0)
    h = n ** (-1.0 / 3.0) * z ** (2.0 / 3.0) * bracket ** (1.0 / 3.0)
    return float(min(h, BANDWIDTH_CLIP * u, BANDWIDTH_CLIP * (1.0 - u)))


def powell_bandwidth(u, n, residuals, alpha=BANDWIDTH_ALPHA) -> float:
    """Residual-scale window for the Powell Jacobian estimate.

    The Hall-Sheather rule gives a bandwidth h in quantile-index units;
    the kernel window needs residual units. Following the usual kernel
    sparsity construction, the index window [u-h, u+h] is mapped through
    the normal quantile function and scaled by a robust dispersion
    estimate kappa = min(sd, IQR/1.349) of the current residuals:

        h_resid = kappa * (Phi^{-1}(u+h) - Phi^{-1}(u-h)).
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    h = hall_sheather_bandwidth(u, n, alpha)
    sd = float(np.std(residuals))
    q75, q25 = np.quantile(residuals, [0.75, 0.25])
    iqr = float(q75 - q25) / 1.349
    kappa = min(d for d in (sd, iqr) if d > 0) if max(sd, iqr) > 0 else 0.0
    if kappa <= 0:
        raise NumericalError("degenerate residuals: no dispersion to set the Powell window")
    return float(kappa * (norm.ppf(u + h) - norm.ppf(u - h)))


def estimate_jacobian(dataset: Dataset, beta_u, h):
    """Powell kernel estimate (1/2h) E_n[1{|Y - Z'beta| <= h} Z Z']."""
    if h <= 0:
        raise UserInputError(f"bandwidth must be positive, got {h}")
    beta_u = np.asarray(beta_u, dtype=np.float64)
    resid = dataset.Y - dataset.Zmat @ beta_u
    inside = np.abs(resid) <= h
    if not np.any(inside):
        raise NumericalError(
            f"empty Powell window: no residuals within +-{h:g} (bandwidth too small)"
        )
    zin = dataset.Zmat[inside]
    return symmetrize(zin.T @ zin / dataset.n) / (2.0 * h)


def fit_process(
    dataset: Dataset,
    basis,
    grid: QuantileGrid | None = None,
    bandwidth_alpha: float = BANDWIDTH_ALPHA,
) -> CoefficientProcess:
    """Fit the coefficient process over the grid and attach matrices.

    The basis is kept as metadata for functional loadings; the design
    matrix itself comes from the dataset. Grid points are solved in
    increasing order through the batched kernel.
    """
    from .qr import _check_rank, certificate

    if grid is None:
        grid = default_grid()
    if basis is not None and getattr(basis, "m", dataset.m) != dataset.m:
        raise UserInputError(
            f"basis has m={basis.m} terms but the design matrix has {dataset.m} columns"
        )
    _check_rank(dataset)
    Zt, yt = dataset.scaled()
    lins = np.zeros((grid.size, dataset.m))
    betas, objs, gaps, iters, status = _solver._solve_path(
        Zt, yt, grid.points, lins, _solver.MAX_ITER, _solver.GAP_TOL
    )
    bad = np.nonzero(status != 0)[0]
    if bad.size:
        g = int(bad[0])
        raise NumericalError(
            f"quantile regression failed at u={grid.points[g]:g}: "
            f"duality gap {gaps[g]:.3e} after {iters[g]} iterations"
        )
    gram = estimate_gram(dataset)
    bandwidths = np.array(
        [
            powell_bandwidth(
                u, dataset.n, dataset.Y - dataset.Zmat @ betas[g], bandwidth_alpha
            )
            for g, u in enumerate(grid.points)
        ]
    )
    jacobians = np.stack(
        [
            estimate_jacobian(dataset, betas[g], bandwidths[g])
            for g in range(grid.size)
        ]
    )
    certs = np.array(
        [
            certificate(QrFit(betas[g], grid.points[g], objs[g] / dataset.n, 0), dataset)
            for g in range(grid.size)
        ]
    )
    return CoefficientProcess(
        grid=grid,
        betas=betas,
        gram=gram,
        jacobians=jacobians,
        bandwidths=bandwidths,
        n=dataset.n,
        basis=basis,
        dataset=dataset,
        objectives=objs / dataset.n,
        certificates=certs,
    )
