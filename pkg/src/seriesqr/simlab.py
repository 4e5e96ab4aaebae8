"""Synthetic data generator, Monte Carlo coverage studies, and
approximation-gap diagnostics.

The data-generating process is Y = g(W) + V'beta_v + sigma * Phi^{-1}(U)
with g(w) = a0 + a1 w + a2 sin(2 pi w) + a3 cos(2 pi w)
+ a4 sin(4 pi w) + a5 cos(4 pi w). The default calibration draws W
uniformly on [-1, -0.5] and fixes the coefficients so the population
average derivative of g is exactly a1 - 4 a3 = -0.74.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from ._rng import child_seed, substream
from .basis import eval_basis_matrix, make_basis
from .couplings import (
    CouplingMethod,
    draw_gaussian,
    draw_gradient_bootstrap,
    draw_pivotal,
    draw_weighted_bootstrap,
)
from .errors import NumericalError, UserInputError
from .inference import (
    average_derivative_functional,
    t_star_process,
    uniform_band,
    value_functional,
)
from .monotone import GridFunction
from .process import QuantileGrid, default_grid, fit_process
from .qr import Dataset

DEFAULT_SIGMA = 0.6
MAX_FAILURE_FRACTION = 0.05


@dataclass(frozen=True)
class DgpSpec:
    """Location-shift data-generating process for the simulation lab."""

    g_coeffs: tuple = (5.0, -0.5, 0.15, 0.06, 0.03, 0.015)
    beta_v: tuple = ()
    sigma: float = DEFAULT_SIGMA
    w_dist: dict = field(default_factory=lambda: {"kind": "uniform", "lo": -1.0, "hi": -0.5})
    v_dist: dict = field(default_factory=lambda: {"kind": "none"})
    n: int = 500
    theta_reference: float | None = -0.74

    def __post_init__(self):
        if len(self.g_coeffs) != 6:
            raise UserInputError("g_coeffs must have six entries (a0..a5)")
        if self.sigma <= 0:
            raise UserInputError(f"sigma must be positive, got {self.sigma}")
        if self.n < 1:
            raise UserInputError(f"n must be positive, got {self.n}")
        if self.w_dist.get("kind") != "uniform":
            raise UserInputError("only uniform w_dist is supported")
        if self.w_dist["lo"] >= self.w_dist["hi"]:
            raise UserInputError("w_dist needs lo < hi")
        if self.v_dist.get("kind") not in ("none", "uniform"):
            raise UserInputError("v_dist kind must be 'none' or 'uniform'")
        if self.v_dist["kind"] == "none" and len(self.beta_v) != 0:
            raise UserInputError("beta_v must be empty when v_dist is 'none'")
        if self.v_dist["kind"] == "uniform" and len(self.beta_v) != self.v_dist.get("dim", 1):
            raise UserInputError("beta_v length must match v_dist dim")


@dataclass(frozen=True)
class SimSample:
    """One simulated sample: covariates, latent ranks, and responses."""

    W: np.ndarray
    V: np.ndarray | None
    U: np.ndarray
    Y: np.ndarray

    @property
    def covariates(self) -> np.ndarray:
        if self.V is None:
            return self.W[:, None]
        return np.column_stack([self.W, self.V])


def g_of_w(spec: DgpSpec, w):
    a = spec.g_coeffs
    tw = 2.0 * np.pi * np.asarray(w, dtype=np.float64)
    return (
        a[0] + a[1] * w + a[2] * np.sin(tw) + a[3] * np.cos(tw)
        + a[4] * np.sin(2.0 * tw) + a[5] * np.cos(2.0 * tw)
    )


def g_prime_of_w(spec: DgpSpec, w):
    a = spec.g_coeffs
    w = np.asarray(w, dtype=np.float64)
    tw = 2.0 * np.pi * w
    return (
        a[1]
        + 2.0 * np.pi * (a[2] * np.cos(tw) - a[3] * np.sin(tw))
        + 4.0 * np.pi * (a[4] * np.cos(2.0 * tw) - a[5] * np.sin(2.0 * tw))
    )


def conditional_quantile_truth(spec: DgpSpec, u, w, v=None):
    """theta(u, w) = g(w) + v'beta_v + sigma Phi^{-1}(u)."""
    out = g_of_w(spec, w) + spec.sigma * norm.ppf(u)
    if len(spec.beta_v):
        if v is None:
            raise UserInputError("the DGP includes V; pass v to evaluate the truth")
        out = out + np.asarray(v, dtype=np.float64) @ np.asarray(spec.beta_v)
    return out


def _draw_w(spec: DgpSpec, gen, n):
    return gen.uniform(spec.w_dist["lo"], spec.w_dist["hi"], n)


def _draw_v(spec: DgpSpec, gen, n):
    if spec.v_dist["kind"] == "none":
        return None
    dim = spec.v_dist.get("dim", 1)
    return gen.uniform(spec.v_dist["lo"], spec.v_dist["hi"], (n, dim))


def _response(spec: DgpSpec, W, V, U):
    y = g_of_w(spec, W) + spec.sigma * norm.ppf(U)
    if V is not None and len(spec.beta_v):
        y = y + V @ np.asarray(spec.beta_v)
    return y


def generate_dgp(spec: DgpSpec, seed) -> SimSample:
    """Draw one sample with U ~ Uniform(0,1) independent of (W, V)."""
    gen = substream(seed, "dgp")
    W = _draw_w(spec, gen, spec.n)
    V = _draw_v(spec, gen, spec.n)
    U = gen.uniform(size=spec.n)
    return SimSample(W=W, V=V, U=U, Y=_response(spec, W, V, U))


def true_average_derivative(spec: DgpSpec, sample=None):
    """The map u -> average derivative of g, constant in u.

    Under the population uniform W measure the average is
    (g(hi) - g(lo)) / (hi - lo); under the empirical measure of a given
    W sample it is the sample mean of g'(W_i). The returned callable
    carries the constant as its .value attribute.
    """
    if sample is None:
        lo, hi = spec.w_dist["lo"], spec.w_dist["hi"]
        const = float((g_of_w(spec, hi) - g_of_w(spec, lo)) / (hi - lo))
    else:
        const = float(np.mean(g_prime_of_w(spec, np.asarray(sample, dtype=np.float64))))

    def theta(u):
        u = np.asarray(u, dtype=np.float64)
        return np.full(u.shape, const) if u.ndim else const

    theta.value = const
    return theta


_DRAW_FNS = {
    CouplingMethod.Pivotal: lambda ds, basis, proc, B, seed: draw_pivotal(proc, B, seed),
    CouplingMethod.Gaussian: lambda ds, basis, proc, B, seed: draw_gaussian(proc, B, seed),
    CouplingMethod.WeightedBootstrap: draw_weighted_bootstrap,
    CouplingMethod.GradientBootstrap: draw_gradient_bootstrap,
}


@dataclass(frozen=True)
class McReport:
    """Aggregated Monte Carlo results, one row per (basis, method)."""

    rows: tuple
    R: int
    alpha: float
    seed: int
    n: int
    grid_lo: float
    grid_hi: float
    grid_size: int
    truth: float
    B_simulation: int
    B_bootstrap: int

    @property
    def max_failure_fraction(self) -> float:
        return max((row["failed"] / self.R for row in self.rows), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_failure_fraction <= MAX_FAILURE_FRACTION

    def to_csv(self) -> str:
        cols = ["basis", "method", "bias", "rmse", "se_sd", "cover", "length", "stat",
                "failed", "r_effective"]
        lines = [",".join(cols)]
        for row in self.rows:
            cells = []
            for c in cols:
                v = row[c]
                cells.append(repr(float(v)) if isinstance(v, float) else str(v))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_json(self, config=None) -> str:
        doc = {
            "meta": {
                "R": self.R,
                "alpha": self.alpha,
                "seed": self.seed,
                "n": self.n,
                "grid": {"lo": self.grid_lo, "hi": self.grid_hi, "size": self.grid_size},
                "truth": self.truth,
                "B_simulation": self.B_simulation,
                "B_bootstrap": self.B_bootstrap,
                "max_failure_fraction": self.max_failure_fraction,
                "passed": self.passed,
            },
            "rows": list(self.rows),
        }
        if config is not None:
            doc["config"] = config
        return json.dumps(doc, sort_keys=True, separators=(",", ": "), indent=1) + "\n"


def _method_enum(method):
    if isinstance(method, CouplingMethod):
        return method
    try:
        return CouplingMethod(method)
    except ValueError:
        raise UserInputError(
            f"unknown method {method!r}; expected one of "
            f"{[m.value for m in CouplingMethod]}"
        ) from None


def run_mc(
    dgp: DgpSpec,
    bases,
    grid: QuantileGrid | None,
    methods,
    R,
    alpha,
    seed,
    B_simulation=1000,
    B_bootstrap=199,
    strict=True,
    band_hook=None,
) -> McReport:
    """Monte Carlo coverage study over (basis, method) combinations.

    The design (W, V) is drawn once and held fixed; each replication
    redraws only the latent ranks U. The coverage target is the average
    derivative of g under the empirical measure of the fixed W sample,
    and a replication covers when the uniform band contains that constant
    at every grid point simultaneously. Replications whose solver fails
    are excluded and counted; with strict=True a failure fraction above
    5% raises.
    """
    if R < 10:
        raise UserInputError(f"R must be at least 10, got {R}")
    if grid is None:
        grid = default_grid()
    methods = [_method_enum(m) for m in methods]
    design_gen = substream(seed, "design")
    W = _draw_w(dgp, design_gen, dgp.n)
    V = _draw_v(dgp, design_gen, dgp.n)
    X = SimSample(W=W, V=V, U=np.empty(0), Y=np.empty(0)).covariates
    truth = true_average_derivative(dgp, W).value

    built = []
    for request in bases:
        family, params = request["family"], dict(request.get("params", {}))
        basis = make_basis(family, params, X)
        Z = eval_basis_matrix(basis, X)
        spec_fn = average_derivative_functional(basis, X, 0)
        built.append((request.get("label", family), basis, Z, spec_fn))

    G = grid.size
    theta_rep = {lab: np.full((R, G), np.nan) for lab, *_ in built}
    sigma_rep = {lab: np.full((R, G), np.nan) for lab, *_ in built}
    fit_ok = {lab: np.zeros(R, dtype=bool) for lab, *_ in built}
    cover = {(lab, m): np.zeros(R, dtype=bool) for lab, *_ in built for m in methods}
    length = {(lab, m): np.full(R, np.nan) for lab, *_ in built for m in methods}
    stat = {(lab, m): np.full(R, np.nan) for lab, *_ in built for m in methods}
    draw_ok = {(lab, m): np.zeros(R, dtype=bool) for lab, *_ in built for m in methods}

    for r in range(R):
        u_lat = substream(seed, "rep", r).uniform(size=dgp.n)
        y = _response(dgp, W, V, u_lat)
        for lab, basis, Z, spec_fn in built:
            ds = Dataset(y, Z)
            try:
                proc = fit_process(ds, basis, grid)
            except NumericalError:
                continue
            th_r, sg_r = _theta_sigma(proc, spec_fn)
            if not np.all(np.isfinite(sg_r)) or np.any(sg_r <= 0):
                continue
            fit_ok[lab][r] = True
            theta_rep[lab][r] = th_r[:, 0]
            sigma_rep[lab][r] = sg_r[:, 0]
            for m in methods:
                B = (
                    B_simulation
                    if m in (CouplingMethod.Pivotal, CouplingMethod.Gaussian)
                    else B_bootstrap
                )
                dseed = child_seed(seed, "rep", r, lab, m.value)
                try:
                    draws = _DRAW_FNS[m](ds, basis, proc, B, dseed)
                    ts = t_star_process(proc, draws, spec_fn)
                    band = uniform_band(ts, alpha)
                except NumericalError:
                    continue
                if band_hook is not None:
                    band = band_hook(band)
                draw_ok[(lab, m)][r] = True
                cover[(lab, m)][r] = bool(np.all(band.covers(truth)))
                length[(lab, m)][r] = float(np.mean(band.upper - band.lower))
                stat[(lab, m)][r] = float(np.asarray(band.k_n).mean())

    rows = []
    for lab, *_ in built:
        ok_f = fit_ok[lab]
        th = theta_rep[lab][ok_f]
        sg = sigma_rep[lab][ok_f]
        if ok_f.sum() >= 2:
            bias_u = th.mean(axis=0) - truth
            bias = float(np.mean(np.abs(bias_u)))
            rmse = float(np.mean(np.sqrt(np.mean((th - truth) ** 2, axis=0))))
            sd_u = th.std(axis=0, ddof=1)
            se_sd = float(np.mean(sg.mean(axis=0) / sd_u))
        else:
            bias = rmse = se_sd = float("nan")
        for m in methods:
            ok = draw_ok[(lab, m)]
            failed = int(R - ok.sum())
            rows.append(
                {
                    "basis": lab,
                    "method": m.value,
                    "bias": bias,
                    "rmse": rmse,
                    "se_sd": se_sd,
                    "cover": float(100.0 * cover[(lab, m)][ok].mean()) if ok.any() else float("nan"),
                    "length": float(length[(lab, m)][ok].mean()) if ok.any() else float("nan"),
                    "stat": float(stat[(lab, m)][ok].mean()) if ok.any() else float("nan"),
                    "failed": failed,
                    "r_effective": int(ok.sum()),
                }
            )

    report = McReport(
        rows=tuple(rows),
        R=R,
        alpha=alpha,
        seed=seed,
        n=dgp.n,
        grid_lo=float(grid.points[0]),
        grid_hi=float(grid.points[-1]),
        grid_size=G,
        truth=truth,
        B_simulation=B_simulation,
        B_bootstrap=B_bootstrap,
    )
    if strict and not report.passed:
        worst = max(report.rows, key=lambda row: row["failed"])
        raise NumericalError(
            f"Monte Carlo failure fraction {report.max_failure_fraction:.1%} exceeds 5% "
            f"(worst cell: basis={worst['basis']} method={worst['method']} "
            f"failed={worst['failed']}/{R})"
        )
    return report


def estimand_gap(
    dgp: DgpSpec,
    basis_request,
    grid: QuantileGrid | None,
    mega_n,
    seed,
    w_points=25,
    functional="value",
) -> GridFunction:
    """Series approximation error on a mega-sample proxy for the population.

    Fits the series quantile regression on a sample of size mega_n and
    returns theta_series - theta_true on a (u, w) grid ("value") or on
    the u grid alone ("average_derivative"). Standard errors of the
    series estimate ride along in meta["se"].
    """
    if mega_n < 1000:
        raise UserInputError(f"mega_n should be at least 1000, got {mega_n}")
    if grid is None:
        grid = default_grid()
    mega = DgpSpec(
        g_coeffs=dgp.g_coeffs,
        beta_v=dgp.beta_v,
        sigma=dgp.sigma,
        w_dist=dict(dgp.w_dist),
        v_dist=dict(dgp.v_dist),
        n=int(mega_n),
        theta_reference=dgp.theta_reference,
    )
    sample = generate_dgp(mega, seed)
    X = sample.covariates
    basis = make_basis(basis_request["family"], dict(basis_request.get("params", {})), X)
    ds = Dataset(sample.Y, eval_basis_matrix(basis, X))
    proc = fit_process(ds, basis, grid)
    if functional == "average_derivative":
        spec_fn = average_derivative_functional(basis, X, 0)
        ts = _theta_sigma(proc, spec_fn)
        truth = true_average_derivative(mega, sample.W).value
        return GridFunction(
            (grid.points,), ts[0][:, 0] - truth, {"se": ts[1][:, 0], "kind": functional}
        )
    if functional != "value":
        raise UserInputError("functional must be 'value' or 'average_derivative'")
    qs = (np.arange(w_points) + 0.5) / w_points
    wpts = np.quantile(sample.W, qs)
    xeval = np.column_stack([wpts] + (
        [np.tile(np.mean(sample.V, axis=0), (w_points, 1))] if sample.V is not None else []
    ))
    spec_fn = value_functional(basis, xeval)
    th, sg = _theta_sigma(proc, spec_fn)
    vbar = None if sample.V is None else np.mean(sample.V, axis=0)
    truth = np.array(
        [
            [conditional_quantile_truth(mega, u, w, vbar) for w in wpts]
            for u in grid.points
        ]
    )
    return GridFunction((grid.points, wpts), th - truth, {"se": sg, "kind": functional})


def _theta_sigma(proc, spec_fn):
    L = spec_fn.loadings
    theta = proc.betas @ L.T
    uu = proc.grid.points[:, None]
    proj = np.einsum("gij,wj->gwi", proc.jacobian_inverses, L)
    var = uu * (1.0 - uu) * np.einsum("gwi,ij,gwj->gw", proj, proc.gram, proj) / proc.n
    return theta, np.sqrt(var)
