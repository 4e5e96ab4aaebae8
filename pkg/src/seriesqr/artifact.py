"""Serialization of fitted coefficient processes.

An artifact is a single .npz container holding every array of a
CoefficientProcess in row-major order plus a JSON metadata record with a
format tag, a version number, the configuration echo, and a SHA-256 hash
of the training data. Reloading reproduces the coefficient process
bit-exactly, including the basis description, so band construction can
reuse a fit without access to the original data.

Layout (npz keys)
-----------------
meta          0-d unicode array, JSON object with keys
              format, version, n, m, grid_size, data_sha256, config,
              basis (basis metadata dict or null)
grid          (G,) quantile grid
betas         (G, m) coefficients
gram          (m, m) design Gram matrix
jacobians     (G, m, m) Powell Jacobian estimates
bandwidths    (G,) Powell window widths in residual units
objectives    (G,) mean check objectives, optional
certificates  (G,) subgradient certificate norms, optional
sample_y      (n,) training responses, optional
sample_x      (n, d) training covariates (pre-basis), optional
basis_<name>  exact float arrays of the basis description

When the training sample is embedded (sample_y, sample_x) the loader
rebuilds the design matrix through the stored basis and checks its
SHA-256 hash against data_sha256, so bootstrap methods and
sample-measure functionals can run from the artifact alone.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .basis import basis_from_payload, basis_to_payload, eval_basis_matrix
from .errors import UserInputError
from .process import CoefficientProcess, QuantileGrid
from .qr import Dataset

ARTIFACT_FORMAT = "seriesqr-process"
ARTIFACT_VERSION = 1

__all__ = ["ARTIFACT_FORMAT", "ARTIFACT_VERSION", "data_hash", "save_process", "load_process"]


def data_hash(Y, Zmat) -> str:
    """SHA-256 over the exact bytes of the response and design arrays."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(Y, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(Zmat, dtype=np.float64).tobytes())
    return h.hexdigest()


def _atomic_savez(path, payload):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".npz.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_process(path, proc: CoefficientProcess, config=None, covariates=None) -> dict:
    """Write a coefficient process artifact; returns the metadata record.

    Parameters
    ----------
    path : str
        Output file path; written atomically (temp file + rename).
    proc : CoefficientProcess
        Fitted process. When its dataset is attached, a SHA-256 hash of
        the data is stored so later commands can check they are paired
        with the same inputs.
    config : dict, optional
        Configuration echo stored verbatim inside the metadata record.
    covariates : ndarray, optional
        (n, d) raw covariate sample. When given together with an
        attached dataset and basis, the sample is embedded so the
        artifact is self-contained for bootstrap draws and
        sample-measure functionals.
    """
    meta = {
        "format": ARTIFACT_FORMAT,
        "version": ARTIFACT_VERSION,
        "n": int(proc.n),
        "m": int(proc.m),
        "grid_size": int(proc.grid.size),
        "data_sha256": None,
        "config": config,
        "basis": None,
    }
    payload = {
        "grid": proc.grid.points,
        "betas": proc.betas,
        "gram": proc.gram,
        "jacobians": proc.jacobians,
        "bandwidths": proc.bandwidths,
    }
    if proc.objectives is not None:
        payload["objectives"] = np.asarray(proc.objectives, dtype=np.float64)
    if proc.certificates is not None:
        payload["certificates"] = np.asarray(proc.certificates, dtype=np.float64)
    if proc.dataset is not None:
        meta["data_sha256"] = data_hash(proc.dataset.Y, proc.dataset.Zmat)
        if covariates is not None:
            if proc.basis is None:
                raise UserInputError(
                    "embedding the sample needs the basis attached to rebuild the design"
                )
            x = np.ascontiguousarray(covariates, dtype=np.float64)
            if x.ndim != 2 or x.shape[0] != proc.dataset.n:
                raise UserInputError("covariates must be (n, d) aligned with the dataset")
            payload["sample_y"] = proc.dataset.Y
            payload["sample_x"] = x
    if proc.basis is not None:
        bmeta, barrays = basis_to_payload(proc.basis)
        meta["basis"] = bmeta
        for name, arr in barrays.items():
            payload["basis_" + name] = arr
    payload["meta"] = np.array(json.dumps(meta, sort_keys=True))
    _atomic_savez(path, payload)
    return meta


def load_process(path):
    """Read an artifact; returns (CoefficientProcess, metadata dict).

    The reloaded arrays are bit-identical to the saved ones. When the
    training sample is embedded, the dataset is reattached (its design
    rebuilt through the basis and verified against the stored hash)
    and the covariate sample is returned under meta["sample_x"]. Raises
    UserInputError on a missing file, a foreign format tag, or a version
    this build does not understand.
    """
    if not os.path.exists(path):
        raise UserInputError(f"artifact not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            contents = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise UserInputError(f"cannot read artifact {path}: {exc}") from exc
    if "meta" not in contents:
        raise UserInputError(f"{path} is not a coefficient process artifact (no meta record)")
    meta = json.loads(str(contents["meta"]))
    if meta.get("format") != ARTIFACT_FORMAT:
        raise UserInputError(
            f"{path} has format tag {meta.get('format')!r}, expected {ARTIFACT_FORMAT!r}"
        )
    if int(meta.get("version", -1)) > ARTIFACT_VERSION:
        raise UserInputError(
            f"artifact version {meta['version']} is newer than supported ({ARTIFACT_VERSION})"
        )
    basis = None
    if meta.get("basis") is not None:
        barrays = {
            k[len("basis_"):]: contents[k] for k in contents if k.startswith("basis_")
        }
        basis = basis_from_payload(meta["basis"], barrays)
    dataset = None
    if "sample_y" in contents:
        if basis is None:
            raise UserInputError(f"{path} embeds a sample but no basis to rebuild the design")
        x = contents["sample_x"]
        dataset = Dataset(contents["sample_y"], eval_basis_matrix(basis, x))
        if data_hash(dataset.Y, dataset.Zmat) != meta.get("data_sha256"):
            raise UserInputError(
                f"{path} embedded sample does not reproduce the stored data hash"
            )
        meta["sample_x"] = x
    proc = CoefficientProcess(
        grid=QuantileGrid(contents["grid"]),
        betas=contents["betas"],
        gram=contents["gram"],
        jacobians=contents["jacobians"],
        bandwidths=contents["bandwidths"],
        n=int(meta["n"]),
        basis=basis,
        dataset=dataset,
        objectives=contents.get("objectives"),
        certificates=contents.get("certificates"),
    )
    return proc, meta
