"""Draws approximating the law of sqrt(n) (beta_hat(.) - beta(.)).

Four methods produce B draws of the scaled coefficient process on the
quantile grid: the pivotal score coupling, the Gaussian (Brownian
bridge) coupling, the exponential-weighted bootstrap, and the gradient
bootstrap that re-solves a linearly perturbed quantile regression.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _solver
from ._linalg import sym_sqrt
from ._rng import substream
from .errors import NumericalError, UserInputError
from .process import CoefficientProcess
from .qr import Dataset

DEFAULT_B_SIMULATION = 1000
DEFAULT_B_BOOTSTRAP = 199


class CouplingMethod(Enum):
    Pivotal = "pivotal"
    Gaussian = "gaussian"
    WeightedBootstrap = "weighted"
    GradientBootstrap = "gradient"


class GradientVia(Enum):
    LinearTerm = "linear_term"
    AugmentedObservation = "augmented_observation"


@dataclass(frozen=True)
class ProcessDraws:
    """B draws of the scaled process, one (grid_size, m) slice per draw."""

    method: CouplingMethod
    draws: np.ndarray  # (B, G, m)
    seed: int
    B: int
    grid: object
    n: int

    def __post_init__(self):
        arr = np.ascontiguousarray(self.draws, dtype=np.float64)
        if self.B < 1 or arr.shape[0] != self.B or arr.ndim != 3:
            raise UserInputError("draws must be a (B, grid, m) array with B >= 1")
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"{self.method.value} draws contain non-finite values")
        object.__setattr__(self, "draws", arr)


def score_process_draws(Zmat, grid_points, B, seed, tag="pivotal"):
    """B draws of the score process n^{-1/2} sum_i Z_i (u - 1{U_i <= u}).

    One uniform sample per draw, shared across all grid points, from the
    substream (seed, tag, draw_index). Returns a (B, G, m) array.
    """
    Zmat = np.ascontiguousarray(Zmat, dtype=np.float64)
    n, m = Zmat.shape
    grid_points = np.asarray(grid_points, dtype=np.float64)
    G = grid_points.size
    umat = np.empty((B, n))
    for b in range(B):
        umat[b] = substream(seed, tag, b).uniform(size=n)
    out = np.empty((B, G, m))
    root_n = np.sqrt(n)
    for g, u in enumerate(grid_points):
        out[:, g, :] = (u - (umat <= u)) @ Zmat / root_n
    return out


def brownian_bridge_draws(grid_points, B, m, seed, tag="gaussian"):
    """B draws of an m-vector of standard Brownian bridges on the grid.

    Exact finite-dimensional sampling: BB(u_1) ~ N(0, u_1(1-u_1)) and
    BB(u_g) | BB(u_{g-1}) = x ~ N(x (1-u_g)/(1-u_{g-1}),
    (u_g - u_{g-1})(1-u_g)/(1-u_{g-1})). Returns a (B, G, m) array.
    """
    grid_points = np.asarray(grid_points, dtype=np.float64)
    G = grid_points.size
    normals = np.empty((B, G, m))
    for b in range(B):
        normals[b] = substream(seed, tag, b).standard_normal((G, m))
    out = np.empty((B, G, m))
    u0 = grid_points[0]
    out[:, 0, :] = np.sqrt(u0 * (1.0 - u0)) * normals[:, 0, :]
    for g in range(1, G):
        up, uc = grid_points[g - 1], grid_points[g]
        shrink = (1.0 - uc) / (1.0 - up)
        sd = np.sqrt((uc - up) * shrink)
        out[:, g, :] = out[:, g - 1, :] * shrink + sd * normals[:, g, :]
    return out


def _apply_jacobian_inverse(proc, raw):
    return np.einsum("gij,bgj->bgi", proc.jacobian_inverses, raw)


def draw_pivotal(proc: CoefficientProcess, B=DEFAULT_B_SIMULATION, seed=0) -> ProcessDraws:
    """Pivotal coupling: draw_b(u) = J_hat^{-1}(u) score_b(u)."""
    if proc.dataset is None:
        raise UserInputError("pivotal draws need the fitting sample attached to the process")
    raw = score_process_draws(proc.dataset.Zmat, proc.grid.points, B, seed, tag="pivotal")
    return ProcessDraws(
        CouplingMethod.Pivotal, _apply_jacobian_inverse(proc, raw), seed, B, proc.grid, proc.n
    )


def draw_gaussian(proc: CoefficientProcess, B=DEFAULT_B_SIMULATION, seed=0) -> ProcessDraws:
    """Gaussian coupling: draw_b(u) = J_hat^{-1}(u) Sigma_hat^{1/2} BB_b(u)."""
    bridge = brownian_bridge_draws(proc.grid.points, B, proc.m, seed, tag="gaussian")
    raw = bridge @ sym_sqrt(proc.gram).T
    return ProcessDraws(
        CouplingMethod.Gaussian, _apply_jacobian_inverse(proc, raw), seed, B, proc.grid, proc.n
    )


def _weight_matrix(dataset, B, seed, retry_of=None):
    n = dataset.n
    out = np.empty((len(retry_of), n)) if retry_of is not None else np.empty((B, n))
    if retry_of is None:
        for b in range(B):
            out[b] = substream(seed, "weighted", b).standard_exponential(n)
    else:
        for k, b in enumerate(retry_of):
            out[k] = substream(seed, "weighted", int(b), "retry").standard_exponential(n)
    return out


def _weighted_refit_draws(dataset, proc, weight_mat):
    """Grid refits for each weight row; returns (betas (B,G,m), status (B,G))."""
    eff = weight_mat * dataset.weights[None, :]
    betas, status = _solver._weighted_batch(
        dataset.Zmat, dataset.Y, eff, proc.grid.points, _solver.MAX_ITER, _solver.GAP_TOL
    )
    return betas, status


def draw_weighted_bootstrap(
    dataset: Dataset, basis, proc: CoefficientProcess, B=DEFAULT_B_BOOTSTRAP, seed=0
) -> ProcessDraws:
    """Exponential-weight bootstrap: draw_b(u) = sqrt(n) (beta_b(u) - beta_hat(u)).

    Each draw refits the whole grid under i.i.d. standard-exponential
    weights. A draw whose solver fails at any grid point is retried once
    with a fresh weight vector before the failure is raised.
    """
    _check_draw_inputs(dataset, basis, proc, B)
    wmat = _weight_matrix(dataset, B, seed)
    betas, status = _weighted_refit_draws(dataset, proc, wmat)
    failed = np.nonzero(np.any(status != 0, axis=1))[0]
    if failed.size:
        wretry = _weight_matrix(dataset, B, seed, retry_of=failed)
        betas2, status2 = _weighted_refit_draws(dataset, proc, wretry)
        still = np.nonzero(np.any(status2 != 0, axis=1))[0]
        if still.size:
            b = int(failed[still[0]])
            g = int(np.nonzero(status2[still[0]])[0][0])
            raise NumericalError(
                f"weighted bootstrap draw {b} failed twice at u={proc.grid.points[g]:g}"
            )
        betas[failed] = betas2
    draws = np.sqrt(dataset.n) * (betas - proc.betas[None, :, :])
    return ProcessDraws(CouplingMethod.WeightedBootstrap, draws, seed, B, proc.grid, proc.n)


def draw_gradient_bootstrap(
    dataset: Dataset,
    basis,
    proc: CoefficientProcess,
    B=DEFAULT_B_BOOTSTRAP,
    seed=0,
    via: GradientVia = GradientVia.LinearTerm,
) -> ProcessDraws:
    """Gradient bootstrap: re-solve with the score draw as a linear tilt.

    Draw b at u is sqrt(n) (beta*_b(u) - beta_hat(u)) where beta* solves
    min E_n[w rho_u(Y - Z'beta)] - score_b(u)'beta / sqrt(n). The
    AugmentedObservation path realizes the same problem by appending one
    synthetic observation with design row sqrt(n) score_b(u) / u and a
    response large enough that its residual stays positive; that residual
    is checked after each solve.
    """
    _check_draw_inputs(dataset, basis, proc, B)
    scores = score_process_draws(dataset.Zmat, proc.grid.points, B, seed, tag="gradient")
    Zt, yt = dataset.scaled()
    us = proc.grid.points
    if via is GradientVia.LinearTerm:
        lins = -np.sqrt(dataset.n) * scores
        betas, status = _solver._perturbed_batch(
            Zt, yt, us, lins, _solver.MAX_ITER, _solver.GAP_TOL
        )
        bad = np.argwhere(status != 0)
        if bad.size:
            b, g = int(bad[0, 0]), int(bad[0, 1])
            raise NumericalError(
                f"gradient bootstrap draw {b} at u={us[g]:g} is unbounded below; "
                "this can occur with positive probability at extreme quantiles"
            )
    elif via is GradientVia.AugmentedObservation:
        betas = _augmented_observation_draws(dataset, Zt, yt, us, scores)
    else:
        raise UserInputError(f"unknown gradient path {via!r}")
    draws = np.sqrt(dataset.n) * (betas - proc.betas[None, :, :])
    return ProcessDraws(CouplingMethod.GradientBootstrap, draws, seed, B, proc.grid, proc.n)


def _augmented_observation_draws(dataset, Zt, yt, us, scores):
    B, G, m = scores.shape
    n = dataset.n
    y_big = n * float(np.max(np.abs(dataset.Y)))
    root_n = np.sqrt(n)
    Za = np.empty((n + 1, m))
    Za[:n] = Zt
    ya = np.empty(n + 1)
    ya[:n] = yt
    ya[n] = y_big
    lin0 = np.zeros(m)
    x0 = np.zeros(n + 1)
    b0 = np.zeros(m)
    betas = np.empty((B, G, m))
    for b in range(B):
        for g in range(G):
            row = root_n * scores[b, g] / us[g]
            Za[n] = row
            beta, _, gap, _, st, _, _ = _solver._solve_one(
                Za, ya, us[g], lin0, _solver.MAX_ITER, _solver.GAP_TOL, x0, b0, False
            )
            if st != 0:
                raise NumericalError(
                    f"augmented-observation solve failed for draw {b} at u={us[g]:g} "
                    f"(duality gap {gap:.3e})"
                )
            if y_big - row @ beta <= 0.0:
                raise NumericalError(
                    f"augmented-observation guard violated for draw {b} at u={us[g]:g}: "
                    "the synthetic response was not large enough"
                )
            betas[b, g] = beta
    return betas


def _check_draw_inputs(dataset, basis, proc, B):
    if B < 1:
        raise UserInputError(f"B must be at least 1, got {B}")
    if dataset.m != proc.m:
        raise UserInputError(
            f"dataset has {dataset.m} columns but the process was fit with m={proc.m}"
        )
    if basis is not None and getattr(basis, "m", dataset.m) != dataset.m:
        raise UserInputError(
            f"basis has m={basis.m} terms but the design matrix has {dataset.m} columns"
        )
    if dataset.n != proc.n:
        raise UserInputError(f"dataset has n={dataset.n} rows but the process has n={proc.n}")
