"""Check-function minimization at a single quantile, with optimality certificates.

solve_qr handles observation weights and an optional linear perturbation
of the objective: with perturbation vector A, the problem is

    min_beta  E_n[w_i rho_u(Y_i - Z_i'beta)] - A'beta / sqrt(n).

certificate reports the scaled norm of the subgradient at the fit, which
for an exact solution of a general-position problem is bounded by
m * max_i ||w_i Z_i|| / sqrt(n).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _solver
from .errors import NumericalError, UserInputError

INTERP_TOL_REL = 1e-9


@dataclass
class Dataset:
    """Response vector, design matrix, and optional positive weights."""

    Y: np.ndarray
    Zmat: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.Y = np.ascontiguousarray(self.Y, dtype=np.float64)
        self.Zmat = np.ascontiguousarray(self.Zmat, dtype=np.float64)
        if self.Y.ndim != 1 or self.Zmat.ndim != 2 or self.Zmat.shape[0] != self.Y.size:
            raise UserInputError("Y must be (n,) and Zmat (n, m) with matching n")
        if self.n < self.m:
            raise UserInputError(f"need n >= m, got n={self.n}, m={self.m}")
        if self.weights is None:
            self.weights = np.ones(self.n)
        else:
            self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
            if self.weights.shape != (self.n,):
                raise UserInputError("weights must be a length-n vector")
            if not np.all(self.weights > 0):
                raise UserInputError("weights must be strictly positive")
        if not (
            np.all(np.isfinite(self.Y))
            and np.all(np.isfinite(self.Zmat))
            and np.all(np.isfinite(self.weights))
        ):
            raise UserInputError("dataset contains non-finite entries")
        self._rank_checked = False

    @property
    def n(self) -> int:
        return self.Y.size

    @property
    def m(self) -> int:
        return self.Zmat.shape[1]

    @property
    def response_scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.Y)))) if self.n else 1.0

    def scaled(self):
        """Weight-scaled copies (w_i Z_i, w_i Y_i) consumed by the solver."""
        return self.weights[:, None] * self.Zmat, self.weights * self.Y


@dataclass
class QrFit:
    """Solution of one (possibly perturbed, weighted) quantile regression."""

    beta: np.ndarray
    u: float
    objective: float
    n_interpolated: int
    perturbation: np.ndarray | None = None
    duality_gap: float = float("nan")
    iterations: int = 0


def check_loss(z, u):
    """Check function rho_u(z) = (u - 1{z<0}) z, elementwise."""
    _validate_u(u)
    z = np.asarray(z, dtype=np.float64)
    out = np.where(z >= 0, u * z, (u - 1.0) * z)
    return float(out) if out.ndim == 0 else out


def _validate_u(u):
    if not 0.0 < float(u) < 1.0:
        raise UserInputError(f"quantile index must lie in (0,1), got {u}")


def _check_rank(dataset: Dataset):
    if dataset._rank_checked:
        return
    _, rmat, pivots = scipy.linalg.qr(dataset.Zmat, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rmat))
    tol = max(dataset.n, dataset.m) * np.finfo(np.float64).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < dataset.m:
        deficient = sorted(int(c) for c in pivots[rank:])
        raise UserInputError(
            f"design matrix is rank deficient (rank {rank} < m={dataset.m}); "
            f"columns {deficient} lie in the span of the others"
        )
    dataset._rank_checked = True


def _as_perturbation(dataset: Dataset, perturbation):
    if perturbation is None:
        return None
    pert = np.ascontiguousarray(perturbation, dtype=np.float64)
    if pert.shape != (dataset.m,):
        raise UserInputError(f"perturbation must be an m-vector, m={dataset.m}")
    if not np.all(np.isfinite(pert)):
        raise UserInputError("perturbation contains non-finite entries")
    return pert


def _count_interpolated(dataset: Dataset, beta) -> int:
    resid = dataset.Y - dataset.Zmat @ beta
    return int(np.sum(np.abs(resid) <= INTERP_TOL_REL * dataset.response_scale))


def solve_qr(dataset: Dataset, u, perturbation=None) -> QrFit:
    """Solve the weighted, optionally perturbed quantile regression at u.

    The perturbation A contributes -A'beta/sqrt(n) to the mean objective.
    Raises NumericalError if the interior point does not converge and
    UserInputError for a rank-deficient design.
    """
    _validate_u(u)
    _check_rank(dataset)
    pert = _as_perturbation(dataset, perturbation)
    lin = np.zeros(dataset.m) if pert is None else -np.sqrt(dataset.n) * pert
    Zt, yt = dataset.scaled()
    beta, obj_sum, gap, iters, status, _, _ = _solver._solve_one(
        Zt, yt, float(u), lin, _solver.MAX_ITER, _solver.GAP_TOL,
        np.zeros(dataset.n), np.zeros(dataset.m), False,
    )
    if status == 2:
        raise NumericalError(
            "perturbed objective is unbounded below (dual infeasible); "
            "the perturbation vector is too large for this design"
        )
    if status != 0:
        raise NumericalError(
            f"interior point did not converge in {_solver.MAX_ITER} iterations; "
            f"final duality gap {gap:.3e}"
        )
    return QrFit(
        beta=beta,
        u=float(u),
        objective=obj_sum / dataset.n,
        n_interpolated=_count_interpolated(dataset, beta),
        perturbation=pert,
        duality_gap=gap,
        iterations=iters,
    )


def _mean_objective(dataset: Dataset, beta, u, pert) -> float:
    resid = dataset.Y - dataset.Zmat @ beta
    obj = float(np.mean(dataset.weights * check_loss(resid, u)))
    if pert is not None:
        obj -= float(pert @ beta) / np.sqrt(dataset.n)
    return obj


def brute_force_oracle(dataset: Dataset, u, perturbation=None) -> QrFit:
    """Exhaustive vertex enumeration for small instances (n <= 15, m <= 3).

    Every size-m observation subset is interpolated exactly and the
    perturbed objective evaluated; the feasible minimizer is returned.
    Singular interpolation systems are skipped.
    """
    _validate_u(u)
    if dataset.n > 15 or dataset.m > 3:
        raise UserInputError("brute_force_oracle is restricted to n <= 15, m <= 3")
    pert = _as_perturbation(dataset, perturbation)
    m = dataset.m
    best_obj = np.inf
    best_beta = None
    for subset in itertools.combinations(range(dataset.n), m):
        a_mat = dataset.Zmat[list(subset)]
        scale = np.prod(np.linalg.norm(a_mat, axis=1))
        if abs(np.linalg.det(a_mat)) <= 1e-12 * max(scale, 1e-300):
            continue
        beta = np.linalg.solve(a_mat, dataset.Y[list(subset)])
        if not np.all(np.isfinite(beta)):
            continue
        obj = _mean_objective(dataset, beta, u, pert)
        if obj < best_obj:
            best_obj = obj
            best_beta = beta
    if best_beta is None:
        raise NumericalError("all interpolation subsets are singular")
    return QrFit(
        beta=best_beta,
        u=float(u),
        objective=best_obj,
        n_interpolated=_count_interpolated(dataset, best_beta),
        perturbation=pert,
    )


def certificate(fit: QrFit, dataset: Dataset) -> float:
    """Scaled subgradient norm sqrt(n) * ||E_n[w psi] + A_n|| at the fit.

    psi_i(beta, u) = Z_i (1{Y_i <= Z_i'beta} - u) and A_n = -A/sqrt(n)
    for perturbation A. Callers compare the result against
    certificate_bound(dataset) = m * max_i ||w_i Z_i|| / sqrt(n).
    """
    n = dataset.n
    resid = dataset.Y - dataset.Zmat @ fit.beta
    indicator = (resid <= 0.0).astype(np.float64)
    psi_bar = (dataset.weights * (indicator - fit.u)) @ dataset.Zmat / n
    if fit.perturbation is not None:
        psi_bar = psi_bar - fit.perturbation / np.sqrt(n)
    return float(np.sqrt(n) * np.linalg.norm(psi_bar))


def certificate_bound(dataset: Dataset) -> float:
    """Upper bound m * max_i ||w_i Z_i|| / sqrt(n) for exact solutions."""
    zhat = float(np.max(np.linalg.norm(dataset.weights[:, None] * dataset.Zmat, axis=1)))
    return dataset.m * zhat / np.sqrt(dataset.n)
