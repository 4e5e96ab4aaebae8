"""Monotonization operators for grid functions and band envelopes.

Every operator here satisfies three axioms: it leaves monotone inputs
unchanged, it is order-preserving (q <= f pointwise implies Mq <= Mf),
and it is distance-reducing in the sup norm. Convex combinations of such
operators inherit all three properties.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import NumericalError, UserInputError
from .inference import ConfidenceBand


@dataclass(frozen=True)
class GridFunction:
    """Values of a function on a product grid of one or two ordered axes."""

    axes: tuple
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        axes = tuple(np.asarray(ax, dtype=np.float64) for ax in self.axes)
        if len(axes) not in (1, 2):
            raise UserInputError("GridFunction supports one or two axes")
        for ax in axes:
            if ax.ndim != 1 or ax.size == 0 or np.any(np.diff(ax) <= 0):
                raise UserInputError("axes must be nonempty and strictly increasing")
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != tuple(ax.size for ax in axes):
            raise UserInputError(
                f"values shape {vals.shape} does not match axes {tuple(ax.size for ax in axes)}"
            )
        if not np.all(np.isfinite(vals)):
            raise UserInputError("GridFunction values must be finite")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "values", vals)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.axes, values, dict(self.meta))


class RearrangeMode(Enum):
    AverageOverOrders = "average_over_orders"
    SequentialFixedOrder = "sequential_fixed_order"


def rearrange_1d(gf: GridFunction) -> GridFunction:
    """Increasing rearrangement: sort the values along the single axis."""
    if gf.ndim != 1:
        raise UserInputError("rearrange_1d needs a one-axis GridFunction")
    return gf.with_values(np.sort(gf.values, kind="stable"))


def rearrange_multi(
    gf: GridFunction,
    mode: RearrangeMode = RearrangeMode.AverageOverOrders,
    order=(0, 1),
) -> GridFunction:
    """Two-dimensional rearrangement by sequential axis sorts.

    Sorting along one axis preserves monotonicity previously established
    along the other, so each sequential pass is monotone in both axes;
    AverageOverOrders averages the two pass orders.
    """
    if gf.ndim != 2:
        raise UserInputError("rearrange_multi needs a two-axis GridFunction")
    if mode is RearrangeMode.AverageOverOrders:
        a = np.sort(np.sort(gf.values, axis=0, kind="stable"), axis=1, kind="stable")
        b = np.sort(np.sort(gf.values, axis=1, kind="stable"), axis=0, kind="stable")
        return gf.with_values(0.5 * (a + b))
    if mode is RearrangeMode.SequentialFixedOrder:
        if sorted(order) != [0, 1]:
            raise UserInputError(f"order must be a permutation of (0,1), got {order}")
        out = gf.values
        for ax in order:
            out = np.sort(out, axis=ax, kind="stable")
        return gf.with_values(out)
    raise UserInputError(f"unknown rearrangement mode {mode!r}")


def _pava(values):
    n = values.size
    sums = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    top = -1
    for v in values:
        top += 1
        sums[top] = v
        counts[top] = 1
        while top > 0 and sums[top - 1] * counts[top] > sums[top] * counts[top - 1]:
            sums[top - 1] += sums[top]
            counts[top - 1] += counts[top]
            top -= 1
    out = np.empty(n)
    pos = 0
    for b in range(top + 1):
        out[pos : pos + counts[b]] = sums[b] / counts[b]
        pos += counts[b]
    return out


def isotonic_project(gf: GridFunction) -> GridFunction:
    """L2 projection onto the increasing cone by pool-adjacent-violators."""
    if gf.ndim != 1:
        raise UserInputError("isotonic_project needs a one-axis GridFunction")
    return gf.with_values(_pava(gf.values))


def convex_combination(op_a, op_b, lam):
    """Operator q -> lam * op_a(q) + (1 - lam) * op_b(q)."""
    if not 0.0 <= lam <= 1.0:
        raise UserInputError(f"lam must lie in [0,1], got {lam}")

    def combined(gf: GridFunction) -> GridFunction:
        return gf.with_values(lam * op_a(gf).values + (1.0 - lam) * op_b(gf).values)

    return combined


def reflected(operator, axes=(0,)):
    """Adapt an increasing operator to decreasing directions by axis flips."""
    axes = tuple(axes)

    def flipped(gf: GridFunction) -> GridFunction:
        out = operator(gf.with_values(np.flip(gf.values, axis=axes)))
        return gf.with_values(np.flip(out.values, axis=axes))

    return flipped


def _band_gridfunction(band: ConfidenceBand, values) -> GridFunction:
    us = band.us if band.us is not None else np.arange(1, values.shape[0] + 1, dtype=float)
    if values.shape[1] == 1:
        return GridFunction((us,), values[:, 0])
    if band.ws is None:
        raise UserInputError("band lacks a w axis for two-dimensional monotonization")
    ws = np.asarray(band.ws, dtype=np.float64).reshape(values.shape[1], -1)[:, 0]
    return GridFunction((us, ws), values)


def monotonize_band(band: ConfidenceBand, operator) -> ConfidenceBand:
    """Apply one monotonization operator to both band envelopes.

    Order preservation of the operator keeps lower <= upper; the
    monotonized band is never wider in sup norm than the original.
    """
    shape = band.lower.shape
    low = operator(_band_gridfunction(band, band.lower)).values.reshape(shape)
    up = operator(_band_gridfunction(band, band.upper)).values.reshape(shape)
    return dataclasses.replace(band, lower=low, upper=up)


def intersect_monotone(band: ConfidenceBand) -> ConfidenceBand:
    """Intersect the band with the set of increasing functions.

    Any increasing function through the band must exceed the running
    maximum of the lower envelope and stay below the reverse running
    minimum of the upper envelope. The intersection can be empty when
    no increasing function fits, which raises; this strategy is not
    robust to misspecification of the monotone shape.
    """
    low = band.lower.copy()
    up = band.upper.copy()
    for ax in range(low.ndim):
        if low.shape[ax] == 1:
            continue
        low = np.maximum.accumulate(low, axis=ax)
        up = np.flip(np.minimum.accumulate(np.flip(up, axis=ax), axis=ax), axis=ax)
    if np.any(low > up):
        raise NumericalError(
            "intersection with the monotone cone is empty; "
            "the band admits no increasing function"
        )
    return dataclasses.replace(band, lower=low, upper=up)
