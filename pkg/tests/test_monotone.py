"""Monotonization operators: axioms, hand cases, band adapters."""

import numpy as np
import pytest

from seriesqr.errors import NumericalError, UserInputError
from seriesqr.inference import ConfidenceBand
from seriesqr.monotone import (
    GridFunction,
    RearrangeMode,
    convex_combination,
    intersect_monotone,
    isotonic_project,
    monotonize_band,
    rearrange_1d,
    rearrange_multi,
    reflected,
    _pava,
)

RNG_SEED = 88

OPERATORS_1D = {
    "rearrange": rearrange_1d,
    "isotonic": isotonic_project,
    "average": convex_combination(rearrange_1d, isotonic_project, 0.5),
}


def _gf1(values):
    values = np.asarray(values, dtype=float)
    return GridFunction((np.arange(values.size, dtype=float),), values)


def _gf2(values):
    values = np.asarray(values, dtype=float)
    ax0 = np.arange(values.shape[0], dtype=float)
    ax1 = np.arange(values.shape[1], dtype=float)
    return GridFunction((ax0, ax1), values)


def test_gridfunction_validation():
    with pytest.raises(UserInputError, match="one or two"):
        GridFunction((np.array([1.0]), np.array([1.0]), np.array([1.0])), np.ones((1, 1, 1)))
    with pytest.raises(UserInputError, match="strictly increasing"):
        GridFunction((np.array([1.0, 1.0]),), np.zeros(2))
    with pytest.raises(UserInputError, match="shape"):
        GridFunction((np.array([0.0, 1.0]),), np.zeros(3))
    with pytest.raises(UserInputError, match="finite"):
        GridFunction((np.array([0.0, 1.0]),), np.array([0.0, np.inf]))


def test_pava_hand_cases():
    np.testing.assert_allclose(_pava(np.array([3.0, 1.0, 2.0])), [2.0, 2.0, 2.0])
    np.testing.assert_allclose(_pava(np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(_pava(np.array([4.0, 3.0, 2.0, 1.0])), [2.5, 2.5, 2.5, 2.5])
    np.testing.assert_allclose(_pava(np.array([1.0, 3.0, 2.0, 4.0])), [1.0, 2.5, 2.5, 4.0])
    np.testing.assert_allclose(_pava(np.array([5.0])), [5.0])


def test_isotonic_is_l2_projection():
    # PAVA minimizes sum (x - f)^2 over increasing x; compare on small cases
    # against a fine search over sorted candidate vectors
    gen = np.random.default_rng(RNG_SEED)
    for _ in range(20):
        f = gen.standard_normal(4)
        iso = _pava(f.copy())
        assert np.all(np.diff(iso) >= -1e-12)
        # optimality: no feasible direction improves the squared error
        for _ in range(200):
            cand = np.sort(iso + 0.05 * gen.standard_normal(4))
            assert np.sum((iso - f) ** 2) <= np.sum((cand - f) ** 2) + 1e-9


def test_rearrange_1d_is_sort():
    f = _gf1([3.0, 1.0, 2.0, 2.0])
    np.testing.assert_array_equal(rearrange_1d(f).values, [1.0, 2.0, 2.0, 3.0])
    with pytest.raises(UserInputError):
        rearrange_1d(_gf2(np.zeros((2, 2))))


def test_rearrange_multi_hand_case():
    f = _gf2([[2.0, 1.0], [0.0, 3.0]])
    a = rearrange_multi(f, RearrangeMode.SequentialFixedOrder, order=(0, 1))
    np.testing.assert_array_equal(a.values, [[0.0, 1.0], [2.0, 3.0]])
    b = rearrange_multi(f, RearrangeMode.SequentialFixedOrder, order=(1, 0))
    np.testing.assert_array_equal(b.values, [[0.0, 2.0], [1.0, 3.0]])
    avg = rearrange_multi(f, RearrangeMode.AverageOverOrders)
    np.testing.assert_array_equal(avg.values, [[0.0, 1.5], [1.5, 3.0]])
    with pytest.raises(UserInputError, match="permutation"):
        rearrange_multi(f, RearrangeMode.SequentialFixedOrder, order=(0, 0))
    with pytest.raises(UserInputError):
        rearrange_multi(_gf1([1.0, 2.0]))


def test_rearrange_preserves_multiset():
    gen = np.random.default_rng(RNG_SEED + 1)
    vals = gen.standard_normal(30)
    np.testing.assert_array_equal(
        np.sort(rearrange_1d(_gf1(vals)).values), np.sort(vals)
    )
    mat = gen.standard_normal((6, 5))
    out = rearrange_multi(_gf2(mat), RearrangeMode.SequentialFixedOrder).values
    np.testing.assert_allclose(np.sort(out.ravel()), np.sort(mat.ravel()))


def test_pava_preserves_mean():
    gen = np.random.default_rng(RNG_SEED + 2)
    vals = gen.standard_normal(50)
    assert _pava(vals).mean() == pytest.approx(vals.mean(), rel=1e-12)


def test_idempotence():
    gen = np.random.default_rng(RNG_SEED + 3)
    vals = gen.standard_normal(25)
    for op in (rearrange_1d, isotonic_project):
        once = op(_gf1(vals))
        np.testing.assert_array_equal(op(once).values, once.values)
    mat = gen.standard_normal((5, 4))
    seq = lambda g: rearrange_multi(g, RearrangeMode.SequentialFixedOrder)
    once = seq(_gf2(mat))
    np.testing.assert_array_equal(seq(once).values, once.values)


def _axiom_trials_1d(op, trials, gen):
    for _ in range(trials):
        n = int(gen.integers(2, 40))
        f = gen.standard_normal(n) * gen.uniform(0.1, 5)
        g = f + gen.standard_normal(n)
        mono = np.sort(gen.standard_normal(n))
        # neutrality: bit-exact on monotone input
        np.testing.assert_array_equal(op(_gf1(mono)).values, mono)
        # output is increasing
        assert np.all(np.diff(op(_gf1(f)).values) >= -1e-12)
        # order preservation
        lowered = f - np.abs(gen.standard_normal(n))
        assert np.all(op(_gf1(lowered)).values <= op(_gf1(f)).values + 1e-12)
        # sup-distance reduction
        d_before = np.max(np.abs(f - g))
        d_after = np.max(np.abs(op(_gf1(f)).values - op(_gf1(g)).values))
        assert d_after <= d_before + 1e-12


@pytest.mark.parametrize("name", sorted(OPERATORS_1D))
def test_axioms_one_dimensional(name):
    gen = np.random.default_rng(RNG_SEED + 4)
    _axiom_trials_1d(OPERATORS_1D[name], 120, gen)


def test_axioms_two_dimensional():
    gen = np.random.default_rng(RNG_SEED + 5)
    op = lambda g: rearrange_multi(g, RearrangeMode.AverageOverOrders)
    for _ in range(120):
        shape = (int(gen.integers(2, 8)), int(gen.integers(2, 8)))
        f = gen.standard_normal(shape)
        g = f + gen.standard_normal(shape)
        mono = np.sort(np.sort(gen.standard_normal(shape), axis=0), axis=1)
        np.testing.assert_array_equal(op(_gf2(mono)).values, mono)
        out = op(_gf2(f)).values
        assert np.all(np.diff(out, axis=0) >= -1e-12)
        assert np.all(np.diff(out, axis=1) >= -1e-12)
        lowered = f - np.abs(gen.standard_normal(shape))
        assert np.all(op(_gf2(lowered)).values <= out + 1e-12)
        d_before = np.max(np.abs(f - g))
        d_after = np.max(np.abs(out - op(_gf2(g)).values))
        assert d_after <= d_before + 1e-12


def test_convex_combination_endpoints():
    gen = np.random.default_rng(RNG_SEED + 6)
    f = _gf1(gen.standard_normal(15))
    both = convex_combination(rearrange_1d, isotonic_project, 1.0)
    np.testing.assert_array_equal(both(f).values, rearrange_1d(f).values)
    none = convex_combination(rearrange_1d, isotonic_project, 0.0)
    np.testing.assert_array_equal(none(f).values, isotonic_project(f).values)
    with pytest.raises(UserInputError):
        convex_combination(rearrange_1d, isotonic_project, 1.5)


def test_reflected_handles_decreasing():
    gen = np.random.default_rng(RNG_SEED + 7)
    dec = np.sort(gen.standard_normal(12))[::-1].copy()
    op = reflected(rearrange_1d)
    np.testing.assert_array_equal(op(_gf1(dec)).values, dec)
    out = op(_gf1(gen.standard_normal(12))).values
    assert np.all(np.diff(out) <= 1e-12)
    mat = gen.standard_normal((4, 5))
    op2 = reflected(lambda g: rearrange_multi(g, RearrangeMode.AverageOverOrders), axes=(0, 1))
    out2 = op2(_gf2(mat)).values
    assert np.all(np.diff(out2, axis=0) <= 1e-12)
    assert np.all(np.diff(out2, axis=1) <= 1e-12)


def _toy_band(gen, G=12):
    us = np.linspace(0.1, 0.9, G)
    theta = np.sort(gen.standard_normal(G))[:, None]
    sig = gen.uniform(0.2, 0.5, (G, 1))
    return ConfidenceBand(
        lower=theta - sig,
        upper=theta + sig,
        critical_value=1.0,
        k_n=1.0,
        delta_n=0.0,
        alpha=0.1,
        method="uniform",
        theta_hat=theta,
        sigma_hat=sig,
        us=us,
        ws=None,
    )


def test_monotonize_band_keeps_envelopes_ordered():
    gen = np.random.default_rng(RNG_SEED + 8)
    for _ in range(30):
        band = _toy_band(gen)
        out = monotonize_band(band, rearrange_1d)
        assert np.all(out.lower <= out.upper)
        assert np.all(np.diff(out.lower[:, 0]) >= -1e-12)
        assert np.all(np.diff(out.upper[:, 0]) >= -1e-12)
        # metadata rides along unchanged
        assert out.alpha == band.alpha and out.method == band.method


def test_monotonize_band_preserves_monotone_truth_coverage():
    gen = np.random.default_rng(RNG_SEED + 9)
    for op in (rearrange_1d, isotonic_project):
        for _ in range(40):
            band = _toy_band(gen)
            truth = np.sort(gen.uniform(band.lower.min(), band.upper.max(), band.lower.shape[0]))
            covered = band.covers(truth[:, None]).all()
            if covered:
                out = monotonize_band(band, op)
                assert out.covers(truth[:, None]).all()


def test_intersect_monotone_hand_case():
    us = np.array([0.2, 0.5, 0.8])
    band = ConfidenceBand(
        lower=np.array([[0.0], [-1.0], [0.5]]),
        upper=np.array([[2.0], [1.5], [3.0]]),
        critical_value=1.0,
        k_n=1.0,
        delta_n=0.0,
        alpha=0.1,
        method="uniform",
        us=us,
        ws=None,
    )
    out = intersect_monotone(band)
    np.testing.assert_array_equal(out.lower[:, 0], [0.0, 0.0, 0.5])
    np.testing.assert_array_equal(out.upper[:, 0], [1.5, 1.5, 3.0])


def test_intersect_monotone_empty_raises():
    band = ConfidenceBand(
        lower=np.array([[1.0], [-2.0]]),
        upper=np.array([[2.0], [-1.0]]),
        critical_value=1.0,
        k_n=1.0,
        delta_n=0.0,
        alpha=0.1,
        method="uniform",
        us=np.array([0.3, 0.7]),
        ws=None,
    )
    with pytest.raises(NumericalError, match="empty"):
        intersect_monotone(band)
