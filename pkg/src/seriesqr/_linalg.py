"""Symmetric-matrix helpers used by the inference pipeline.

Inverses and square roots are computed through symmetric
eigendecomposition so the results stay symmetric to machine precision.
Near-singular matrices are repaired by flooring eigenvalues at
EIG_FLOOR_REL times trace/m before inversion.
"""

from __future__ import annotations

import numpy as np

EIG_FLOOR_REL = 1e-10


def symmetrize(mat):
    return (mat + mat.T) / 2.0


def _floored_eigh(mat):
    vals, vecs = np.linalg.eigh(symmetrize(np.asarray(mat, dtype=np.float64)))
    m = mat.shape[0]
    floor = EIG_FLOOR_REL * max(np.trace(mat), 0.0) / m
    if floor <= 0.0:
        floor = np.finfo(np.float64).tiny
    return np.maximum(vals, floor), vecs


def sym_inverse(mat):
    """Inverse of a symmetric PSD matrix with eigenvalue flooring."""
    vals, vecs = _floored_eigh(mat)
    return symmetrize((vecs / vals) @ vecs.T)


def sym_sqrt(mat):
    """Symmetric PSD square root; negative eigenvalues are clipped to 0."""
    vals, vecs = np.linalg.eigh(symmetrize(np.asarray(mat, dtype=np.float64)))
    vals = np.clip(vals, 0.0, None)
    return symmetrize((vecs * np.sqrt(vals)) @ vecs.T)


def sym_inv_sqrt(mat):
    """Inverse square root of a symmetric PSD matrix with flooring."""
    vals, vecs = _floored_eigh(mat)
    return symmetrize((vecs / np.sqrt(vals)) @ vecs.T)
