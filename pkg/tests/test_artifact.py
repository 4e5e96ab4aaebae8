"""Process artifact round-trips, tamper detection, format guards."""

import json

import numpy as np
import pytest

from seriesqr.artifact import (
    ARTIFACT_FORMAT,
    ARTIFACT_VERSION,
    data_hash,
    load_process,
    save_process,
)
from seriesqr.basis import eval_basis_matrix, make_basis
from seriesqr.couplings import draw_pivotal, draw_weighted_bootstrap
from seriesqr.errors import UserInputError
from seriesqr.process import QuantileGrid, fit_process
from seriesqr.qr import Dataset

RNG_SEED = 9911


def _proc(gen, n=130):
    x = gen.uniform(-1.0, -0.5, (n, 1))
    basis = make_basis("power", {"degree": 2}, x)
    y = 1.0 + x[:, 0] + 0.5 * gen.standard_normal(n)
    ds = Dataset(y, eval_basis_matrix(basis, x))
    return x, fit_process(ds, basis, QuantileGrid(np.array([0.3, 0.5, 0.7])))


def test_round_trip_bit_exact(tmp_path):
    gen = np.random.default_rng(RNG_SEED)
    x, proc = _proc(gen)
    path = tmp_path / "proc.npz"
    meta = save_process(path, proc, config={"note": 1}, covariates=x)
    assert meta["format"] == ARTIFACT_FORMAT and meta["version"] == ARTIFACT_VERSION
    back, meta2 = load_process(path)
    np.testing.assert_array_equal(back.betas, proc.betas)
    np.testing.assert_array_equal(back.gram, proc.gram)
    np.testing.assert_array_equal(back.jacobians, proc.jacobians)
    np.testing.assert_array_equal(back.jacobian_inverses, proc.jacobian_inverses)
    np.testing.assert_array_equal(back.bandwidths, proc.bandwidths)
    np.testing.assert_array_equal(back.grid.points, proc.grid.points)
    np.testing.assert_array_equal(back.objectives, proc.objectives)
    np.testing.assert_array_equal(back.certificates, proc.certificates)
    assert back.n == proc.n and back.m == proc.m
    assert meta2["config"] == {"note": 1}
    assert meta2["data_sha256"] == data_hash(proc.dataset.Y, proc.dataset.Zmat)


def test_embedded_sample_supports_bootstrap(tmp_path):
    gen = np.random.default_rng(RNG_SEED + 1)
    x, proc = _proc(gen)
    path = tmp_path / "full.npz"
    save_process(path, proc, covariates=x)
    back, meta = load_process(path)
    np.testing.assert_array_equal(back.dataset.Y, proc.dataset.Y)
    np.testing.assert_array_equal(back.dataset.Zmat, proc.dataset.Zmat)
    np.testing.assert_array_equal(meta["sample_x"], x)
    # bootstrap draws run from the reloaded artifact alone and reproduce
    # the draws computed from the in-memory process
    a = draw_pivotal(back, 12, seed=4)
    b = draw_pivotal(proc, 12, seed=4)
    np.testing.assert_array_equal(a.draws, b.draws)
    a = draw_weighted_bootstrap(back.dataset, back.basis, back, 4, seed=4)
    b = draw_weighted_bootstrap(proc.dataset, proc.basis, proc, 4, seed=4)
    np.testing.assert_array_equal(a.draws, b.draws)


def test_slim_artifact_has_no_dataset(tmp_path):
    gen = np.random.default_rng(RNG_SEED + 2)
    x, proc = _proc(gen)
    path = tmp_path / "slim.npz"
    save_process(path, proc)  # no covariates: hash stored, sample not embedded
    back, meta = load_process(path)
    assert back.dataset is None
    assert meta["data_sha256"] is not None
    with pytest.raises(UserInputError, match="sample attached"):
        draw_pivotal(back, 5, seed=0)


def test_embedding_requires_basis(tmp_path):
    gen = np.random.default_rng(RNG_SEED + 3)
    y = gen.standard_normal(60)
    ds = Dataset(y, np.ones((60, 1)))
    proc = fit_process(ds, None, QuantileGrid(np.array([0.5])))
    with pytest.raises(UserInputError, match="needs the basis"):
        save_process(tmp_path / "x.npz", proc, covariates=np.ones((60, 1)))
    with pytest.raises(UserInputError, match="aligned"):
        gen2 = np.random.default_rng(RNG_SEED)
        x2, proc2 = _proc(gen2)
        save_process(tmp_path / "y.npz", proc2, covariates=x2[:-1])


def test_tampered_sample_detected(tmp_path):
    gen = np.random.default_rng(RNG_SEED + 4)
    x, proc = _proc(gen)
    path = tmp_path / "orig.npz"
    save_process(path, proc, covariates=x)
    with np.load(path, allow_pickle=False) as z:
        contents = {k: z[k] for k in z.files}
    contents["sample_y"] = contents["sample_y"] + 1e-9
    hacked = tmp_path / "hacked.npz"
    np.savez(hacked, **contents)
    with pytest.raises(UserInputError, match="hash"):
        load_process(hacked)


def test_foreign_and_malformed_files_rejected(tmp_path):
    missing = tmp_path / "nope.npz"
    with pytest.raises(UserInputError, match="not found"):
        load_process(missing)
    plain = tmp_path / "plain.npz"
    np.savez(plain, a=np.ones(3))
    with pytest.raises(UserInputError, match="no meta record"):
        load_process(plain)
    noise = tmp_path / "noise.npz"
    noise.write_bytes(b"not a zip archive")
    with pytest.raises(UserInputError, match="cannot read"):
        load_process(noise)


def test_version_and_format_guards(tmp_path):
    gen = np.random.default_rng(RNG_SEED + 5)
    x, proc = _proc(gen)
    path = tmp_path / "v.npz"
    save_process(path, proc)
    with np.load(path, allow_pickle=False) as z:
        contents = {k: z[k] for k in z.files}
    meta = json.loads(str(contents["meta"]))
    meta["version"] = ARTIFACT_VERSION + 1
    contents["meta"] = np.array(json.dumps(meta))
    newer = tmp_path / "newer.npz"
    np.savez(newer, **contents)
    with pytest.raises(UserInputError, match="newer than supported"):
        load_process(newer)
    meta["version"] = ARTIFACT_VERSION
    meta["format"] = "other-tool"
    contents["meta"] = np.array(json.dumps(meta))
    other = tmp_path / "other.npz"
    np.savez(other, **contents)
    with pytest.raises(UserInputError, match="format tag"):
        load_process(other)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    gen = np.random.default_rng(RNG_SEED + 6)
    x, proc = _proc(gen)
    save_process(tmp_path / "a.npz", proc, covariates=x)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["a.npz"]
