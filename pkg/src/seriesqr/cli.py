"""Command-line front end: fit, band, mc, estimand-gap, monotonize.

Every command reads a schema-validated JSON configuration (--config),
writes its outputs atomically into a directory (--out), and is
deterministic given (inputs, config, --seed). --data names the
command's input file: a CSV sample for fit, a fitted-process artifact
for band, and a band table for monotonize. Thread count comes from
--threads, overridden by the SERIESQR_THREADS environment variable.

Exit codes: 0 success, 1 user error (configuration or data), 2
numerical failure. The mc command also exits 2 when more than 5% of
replications fail.

CSV inputs are comma-separated with a required header row, '.' decimal
points, and UTF-8 text; rows are counted from the header, which is
row 1. Emitted tables use repr() floats so reading them back loses no
precision.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile

import numpy as np

from .artifact import load_process, save_process
from .basis import eval_basis_matrix, make_basis
from .config import load_config, resolve_grid
from .couplings import (
    DEFAULT_B_BOOTSTRAP,
    DEFAULT_B_SIMULATION,
    GradientVia,
    draw_gaussian,
    draw_gradient_bootstrap,
    draw_pivotal,
    draw_weighted_bootstrap,
)
from .errors import NumericalError, UserInputError
from .inference import (
    ConfidenceBand,
    CriticalRule,
    average_derivative_functional,
    conditional_average_derivative_functional,
    derivative_functional,
    pointwise_interval,
    t_star_process,
    uniform_band,
    value_functional,
)
from .monotone import (
    RearrangeMode,
    convex_combination,
    intersect_monotone,
    isotonic_project,
    monotonize_band,
    rearrange_1d,
    rearrange_multi,
    reflected,
)
from .process import fit_process
from .qr import Dataset, certificate_bound
from .simlab import DgpSpec, estimand_gap, run_mc

_CRITICAL_RULES = {
    "normal": CriticalRule.NormalQuantile,
    "coupling": CriticalRule.CouplingQuantile,
}
_SIMULATION_METHODS = ("pivotal", "gaussian")

__all__ = ["main"]


def _atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _dump_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ": "), indent=1) + "\n"


def _read_csv_columns(path):
    """Read a headered numeric CSV into (header, (n, cols) array)."""
    import csv

    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise UserInputError(f"data file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise UserInputError(f"data file {path} is empty; a header row is required") from None
        if len(set(header)) != len(header):
            raise UserInputError(f"data file {path} repeats a column name in its header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise UserInputError(
                    f"row {lineno} has {len(row)} cells, expected {len(header)}"
                )
            vals = []
            for name, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise UserInputError(
                        f"non-numeric value {cell.strip()!r} at row {lineno}, "
                        f"column {name!r}"
                    ) from None
            rows.append(vals)
    if not rows:
        raise UserInputError(f"data file {path} has a header but no data rows")
    return header, np.asarray(rows, dtype=np.float64)


def cmd_fit(data_path, cfg, out_dir, seed) -> int:
    """Fit the coefficient process from a CSV sample and save the artifact."""
    if data_path is None:
        raise UserInputError("fit needs --data pointing at a CSV sample")
    header, table = _read_csv_columns(data_path)
    columns = {name: table[:, j] for j, name in enumerate(header)}
    response = cfg["response"]
    names = cfg["covariates"]
    if names is None:
        names = [h for h in header if h != response]
    missing = [c for c in [response] + list(names) if c not in columns]
    if missing:
        raise UserInputError(
            f"data file lacks column(s) {missing}; available columns are {header}"
        )
    Y = columns[response]
    if names:
        X = np.column_stack([columns[c] for c in names])
        basis = make_basis(cfg["basis"]["family"], cfg["basis"].get("params", {}), X)
        Z = eval_basis_matrix(basis, X)
    else:
        X, basis, Z = np.empty((Y.size, 0)), None, np.ones((Y.size, 1))
    dataset = Dataset(Y, Z)
    grid = resolve_grid(cfg["grid"])
    proc = fit_process(dataset, basis, grid, cfg["bandwidth_alpha"])
    embed = bool(cfg["embed_sample"]) and basis is not None
    artifact_path = os.path.join(out_dir, "process.npz")
    meta = save_process(artifact_path, proc, config=cfg, covariates=X if embed else None)
    cert = np.max(proc.certificates) if proc.certificates is not None else float("nan")
    lines = [
        "series quantile regression fit",
        f"observations (n)      {dataset.n}",
        f"design columns (m)    {dataset.m}",
        f"basis                 {'intercept only' if basis is None else basis.family + ' ' + json.dumps(basis.params, sort_keys=True)}",
        f"quantile grid         {grid.points[0]:g} .. {grid.points[-1]:g} ({grid.size} points)",
        f"max certificate       {cert:.6e} (bound {certificate_bound(dataset):.6e})",
        f"bandwidths            {proc.bandwidths.min():.6g} .. {proc.bandwidths.max():.6g}",
        f"sample embedded       {'yes' if embed else 'no'}",
        f"data sha256           {meta['data_sha256']}",
    ]
    _atomic_write_text(os.path.join(out_dir, "fit_summary.txt"), "\n".join(lines) + "\n")
    print(artifact_path)
    return 0


def _functional_from_config(block, proc, meta):
    kind = block["kind"]
    k = int(block.get("k") or 0)
    us = None if block.get("us") is None else np.asarray(block["us"], dtype=np.float64)
    if kind in ("value", "derivative"):
        if block.get("ws") is None:
            raise UserInputError(f"functional kind {kind!r} needs 'ws' evaluation points")
        if proc.basis is None:
            raise UserInputError(
                "the artifact was fit without a basis (intercept only); "
                "covariate-point functionals are unavailable"
            )
        ws = np.asarray(block["ws"], dtype=np.float64)
        if kind == "value":
            return value_functional(proc.basis, ws, us)
        return derivative_functional(proc.basis, k, ws, us)
    sample = meta.get("sample_x")
    if sample is None:
        raise UserInputError(
            f"functional kind {kind!r} averages over the training sample, which this "
            "artifact does not embed; refit with embed_sample=true"
        )
    if kind == "average_derivative":
        return average_derivative_functional(proc.basis, sample, k, us)
    weights = block.get("weights")
    if weights is None:
        raise UserInputError("conditional_average_derivative needs conditioning 'weights'")
    return conditional_average_derivative_functional(
        proc.basis, sample, k, np.asarray(weights, dtype=np.float64), us
    )


def _draws_for(method, proc, B, seed, cfg):
    if method == "gaussian":
        return draw_gaussian(proc, B, seed)
    if proc.dataset is None:
        raise UserInputError(
            f"method {method!r} needs the training sample, but the artifact does not "
            "embed it; refit with embed_sample=true (only 'gaussian' runs without data)"
        )
    if method == "pivotal":
        return draw_pivotal(proc, B, seed)
    if method == "weighted":
        return draw_weighted_bootstrap(proc.dataset, proc.basis, proc, B, seed)
    return draw_gradient_bootstrap(
        proc.dataset, proc.basis, proc, B, seed, via=GradientVia(cfg["gradient_via"])
    )


def _monotone_operator(block, ndim):
    name = block["operator"]
    lam = float(block.get("lambda", 0.5))
    axes = (0,) if ndim == 1 else (0, 1)
    if ndim == 1:
        rearr, iso = rearrange_1d, isotonic_project
    else:
        def rearr(gf):
            return rearrange_multi(gf, RearrangeMode.AverageOverOrders)

        iso = None
    if name == "rearrangement":
        op = rearr
    elif name == "isotonic":
        if iso is None:
            raise UserInputError(
                "isotonic projection is one-dimensional; two-axis bands "
                "use rearrangement"
            )
        op = iso
    else:
        if iso is None:
            raise UserInputError(
                "the average operator mixes in an isotonic projection, which is "
                "one-dimensional; two-axis bands use rearrangement"
            )
        op = convex_combination(rearr, iso, lam)
    if block.get("decreasing", False):
        op = reflected(op, axes=axes)
    return op


def _flip_band(band, axes):
    return dataclasses.replace(
        band,
        lower=np.flip(band.lower, axis=axes),
        upper=np.flip(band.upper, axis=axes),
        theta_hat=np.flip(band.theta_hat, axis=axes),
        sigma_hat=np.flip(band.sigma_hat, axis=axes),
    )


def _apply_monotonize(band, block):
    ndim = 1 if band.lower.shape[1] == 1 else 2
    if block["operator"] == "intersect":
        axes = (0,) if ndim == 1 else (0, 1)
        if block.get("decreasing", False):
            return _flip_band(intersect_monotone(_flip_band(band, axes)), axes)
        return intersect_monotone(band)
    return monotonize_band(band, _monotone_operator(block, ndim))


def _band_table(band) -> str:
    ws = None if band.ws is None else np.atleast_2d(np.asarray(band.ws, dtype=np.float64))
    head = ["u"]
    if ws is not None:
        head += [f"w{j + 1}" for j in range(ws.shape[1])]
    head += ["theta_hat", "sigma_hat", "lower", "upper"]
    lines = [",".join(head)]
    G, W = band.lower.shape
    for g in range(G):
        for w in range(W):
            cells = [repr(float(band.us[g]))]
            if ws is not None:
                cells += [repr(float(v)) for v in ws[w]]
            cells += [
                repr(float(band.theta_hat[g, w])),
                repr(float(band.sigma_hat[g, w])),
                repr(float(band.lower[g, w])),
                repr(float(band.upper[g, w])),
            ]
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _band_meta(band, method, cfg, seed, extra=None) -> dict:
    doc = {
        "alpha": band.alpha,
        "band_kind": band.method,
        "method": method,
        "B": band.B,
        "seed": seed,
        "k_n": _jsonable(band.k_n),
        "delta_n": band.delta_n,
        "c_n": _jsonable(band.critical_value),
        "us": _jsonable(np.asarray(band.us, dtype=np.float64)),
        "config": cfg,
    }
    if extra:
        doc.update(extra)
    return doc


def cmd_band(data_path, cfg, out_dir, seed) -> int:
    """Build a confidence band from a fitted-process artifact."""
    if data_path is None:
        raise UserInputError("band needs --data pointing at a fitted-process artifact")
    proc, meta = load_process(data_path)
    method = cfg["method"]
    B = cfg["B"]
    if B is None:
        B = DEFAULT_B_SIMULATION if method in _SIMULATION_METHODS else DEFAULT_B_BOOTSTRAP
    spec_fn = _functional_from_config(cfg["functional"], proc, meta)
    draws = _draws_for(method, proc, int(B), seed, cfg)
    tstat = t_star_process(proc, draws, spec_fn)
    if cfg["band"] == "uniform":
        band = uniform_band(tstat, cfg["alpha"])
    else:
        band = pointwise_interval(tstat, cfg["alpha"], _CRITICAL_RULES[cfg["critical"]])
    if cfg["monotonize"] is not None:
        band = _apply_monotonize(band, cfg["monotonize"])
    _atomic_write_text(os.path.join(out_dir, "band.csv"), _band_table(band))
    extra = {"n": proc.n, "m": proc.m, "data_sha256": meta.get("data_sha256")}
    _atomic_write_text(
        os.path.join(out_dir, "band_meta.json"),
        _dump_json(_band_meta(band, method, cfg, seed, extra)),
    )
    print(os.path.join(out_dir, "band.csv"))
    return 0


def _dgp_from_config(block) -> DgpSpec:
    kwargs = {}
    for key in ("g_coeffs", "beta_v"):
        if key in block:
            kwargs[key] = tuple(block[key])
    for key in ("sigma", "n", "w_dist", "v_dist", "theta_reference"):
        if key in block:
            kwargs[key] = block[key]
    return DgpSpec(**kwargs)


def cmd_mc(cfg, out_dir, seed) -> int:
    """Run the Monte Carlo coverage study and emit CSV + JSON reports."""
    report = run_mc(
        dgp=_dgp_from_config(cfg["dgp"]),
        bases=cfg["bases"],
        grid=resolve_grid(cfg["grid"]),
        methods=cfg["methods"],
        R=cfg["R"],
        alpha=cfg["alpha"],
        seed=seed,
        B_simulation=cfg["B_simulation"],
        B_bootstrap=cfg["B_bootstrap"],
        strict=False,
    )
    _atomic_write_text(os.path.join(out_dir, "report.csv"), report.to_csv())
    _atomic_write_text(os.path.join(out_dir, "report.json"), report.to_json(config=cfg))
    print(os.path.join(out_dir, "report.csv"))
    if not report.passed:
        print(
            f"numerical failure: {report.max_failure_fraction:.1%} of replications "
            "failed (tolerated: 5%)",
            file=sys.stderr,
        )
        return 2
    return 0


def cmd_estimand_gap(cfg, out_dir, seed) -> int:
    """Measure the series approximation error against the known truth."""
    gap = estimand_gap(
        _dgp_from_config(cfg["dgp"]),
        cfg["basis"],
        resolve_grid(cfg["grid"]),
        cfg["mega_n"],
        seed,
        w_points=cfg["w_points"],
        functional=cfg["functional"],
    )
    se = gap.meta["se"]
    lines = []
    if gap.ndim == 1:
        lines.append("u,gap,se")
        for i, u in enumerate(gap.axes[0]):
            lines.append(f"{float(u)!r},{float(gap.values[i])!r},{float(se[i])!r}")
    else:
        lines.append("u,w,gap,se")
        for i, u in enumerate(gap.axes[0]):
            for j, w in enumerate(gap.axes[1]):
                lines.append(
                    f"{float(u)!r},{float(w)!r},"
                    f"{float(gap.values[i, j])!r},{float(se[i, j])!r}"
                )
    _atomic_write_text(os.path.join(out_dir, "gap.csv"), "\n".join(lines) + "\n")
    meta = {
        "functional": cfg["functional"],
        "mega_n": cfg["mega_n"],
        "seed": seed,
        "max_abs_gap": float(np.max(np.abs(gap.values))),
        "config": cfg,
    }
    _atomic_write_text(os.path.join(out_dir, "gap_meta.json"), _dump_json(meta))
    print(os.path.join(out_dir, "gap.csv"))
    return 0


def _read_band_files(data_path):
    if data_path is None:
        raise UserInputError("monotonize needs --data pointing at a band CSV")
    stem = data_path[:-4] if data_path.endswith(".csv") else data_path
    meta_path = stem + "_meta.json"
    if not os.path.exists(meta_path):
        raise UserInputError(f"band metadata not found next to the table: {meta_path}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    header, table = _read_csv_columns(data_path)
    needed = ["u", "theta_hat", "sigma_hat", "lower", "upper"]
    missing = [c for c in needed if c not in header]
    if missing:
        raise UserInputError(f"band table lacks column(s) {missing}")
    wcols = [h for h in header if h.startswith("w") and h[1:].isdigit()]
    u_col = table[:, header.index("u")]
    us, first = np.unique(u_col, return_index=True)
    us = u_col[np.sort(first)]
    G = us.size
    if table.shape[0] % G:
        raise UserInputError("band table rows do not factor into (u, w) blocks")
    W = table.shape[0] // G
    if not np.array_equal(np.repeat(us, W), u_col):
        raise UserInputError("band table rows must be grouped by u, then w")

    def col(name):
        return np.ascontiguousarray(table[:, header.index(name)].reshape(G, W))

    ws = None
    if wcols:
        ws = table[:W, [header.index(c) for c in wcols]]
    kn = meta["k_n"]
    cn = meta["c_n"]
    band = ConfidenceBand(
        lower=col("lower"),
        upper=col("upper"),
        critical_value=np.asarray(cn) if isinstance(cn, list) else float(cn),
        k_n=np.asarray(kn) if isinstance(kn, list) else float(kn),
        delta_n=meta["delta_n"],
        alpha=meta["alpha"],
        method=meta["band_kind"],
        theta_hat=col("theta_hat"),
        sigma_hat=col("sigma_hat"),
        us=us,
        ws=ws,
        B=meta.get("B"),
        seed=meta.get("seed"),
    )
    return band, meta


def cmd_monotonize(data_path, cfg, out_dir, seed) -> int:
    """Monotonize the envelopes of a previously emitted band table."""
    band, meta = _read_band_files(data_path)
    out = _apply_monotonize(band, cfg)
    meta = dict(meta)
    meta["monotonize"] = cfg
    _atomic_write_text(os.path.join(out_dir, "band.csv"), _band_table(out))
    _atomic_write_text(os.path.join(out_dir, "band_meta.json"), _dump_json(meta))
    print(os.path.join(out_dir, "band.csv"))
    return 0


def _resolve_threads(flag_value):
    raw = os.environ.get("SERIESQR_THREADS")
    if raw in (None, ""):
        raw = flag_value
    if raw is None:
        return None
    try:
        t = int(raw)
    except (TypeError, ValueError):
        raise UserInputError(f"thread count must be an integer, got {raw!r}") from None
    import numba

    t = max(1, min(t, int(numba.config.NUMBA_NUM_THREADS)))
    numba.set_num_threads(t)
    return t


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserInputError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="seriesqr",
        description=(
            "Series quantile regression: process fitting, strong-coupling "
            "inference, confidence bands, monotonization, and simulation studies."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "fit": "fit the coefficient process from a CSV sample (--data)",
        "band": "build a confidence band from a fit artifact (--data)",
        "mc": "run a Monte Carlo coverage study",
        "estimand-gap": "measure series approximation error on a mega-sample",
        "monotonize": "monotonize the envelopes of a band table (--data)",
    }
    for name, help_text in specs.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--data", default=None, help="input file (meaning depends on the command)")
        sp.add_argument("--out", required=True, help="output directory (created if missing)")
        sp.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
        sp.add_argument(
            "--threads",
            default=None,
            help="worker thread count (env SERIESQR_THREADS overrides)",
        )
    return parser


def main(argv=None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, args.command)
        _resolve_threads(args.threads)
        os.makedirs(args.out, exist_ok=True)
        if args.command == "fit":
            return cmd_fit(args.data, cfg, args.out, args.seed)
        if args.command == "band":
            return cmd_band(args.data, cfg, args.out, args.seed)
        if args.command == "mc":
            return cmd_mc(cfg, args.out, args.seed)
        if args.command == "estimand-gap":
            return cmd_estimand_gap(cfg, args.out, args.seed)
        return cmd_monotonize(args.data, cfg, args.out, args.seed)
    except UserInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
