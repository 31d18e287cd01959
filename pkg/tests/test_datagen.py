import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leap import datagen as dg


def lag1_corr(ds, i):
    return np.corrcoef(ds.z[:, -2, i], ds.z[:, -1, i])[0, 1]


@pytest.fixture(scope="module")
def var_small():
    return dg.gen_var(total_points=5000, seed=3)


@pytest.fixture(scope="module")
def np_sparse():
    return dg.gen_np(total_points=4000, num_regimes=6, sparse=True, seed=2)


def test_var_defaults_shape():
    ds = dg.gen_var()
    assert ds.x.shape == (50_000, 3, 8)
    assert ds.z.shape == (50_000, 3, 8)
    assert ds.spec.noise_family == "laplace" and ds.spec.noise_scale == 0.1
    assert ds.manifest()["num_windows"] == 50_000


def test_var_spec_invariants(var_small):
    B = var_small.spec.transitions
    assert np.all(np.abs(B) <= 0.5)
    assert dg.companion_radius(B[0]) < 1.0


def test_white_noise_when_transitions_vanish():
    ds = dg.gen_var(n=2, L=1, total_points=10_000, seed=1, transitions=np.zeros((1, 2, 2)))
    for i in range(2):
        assert abs(lag1_corr(ds, i)) < 0.05


def test_ar1_autocorrelation_matches_coefficient():
    B = np.array([[[0.5, 0.0], [0.0, 0.5]]])
    ds = dg.gen_var(n=2, L=1, total_points=20_000, seed=4, transitions=B)
    for i in range(2):
        assert abs(lag1_corr(ds, i) - 0.5) < 0.05


def test_x_is_exact_mixture(var_small):
    assert np.array_equal(var_small.x, dg.mix(var_small.z, var_small.mixing))


def test_var_reproducible():
    a = dg.gen_var(total_points=2000, seed=9)
    b = dg.gen_var(total_points=2000, seed=9)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.spec.B, b.spec.B)


def test_sequence_streams_independent_of_count():
    # the first sequences are identical whether 20 or 40 sequences are drawn
    a = dg.gen_var(total_points=2000, seed=5)
    b = dg.gen_var(total_points=4000, seed=5)
    assert np.array_equal(a.z[:1000], b.z[:1000])


def test_var_stationary_under_long_resimulation(var_small):
    u = np.zeros(4, dtype=np.uint32)
    long = dg._simulate_var(var_small.spec, 11, u, 10 * 102, 100)
    assert np.all(np.isfinite(long))
    assert np.abs(long).max() < 20 * np.abs(var_small.z).max()


def test_low_rank_variant():
    ds = dg.gen_var(L=1, rank_constraint=4, total_points=2000, seed=0)
    assert np.linalg.matrix_rank(ds.spec.B[0]) == 4
    assert np.all(np.abs(ds.spec.B) <= 0.5)
    assert ds.kind == "viol-lowrank"


def test_rank_constraint_incompatible():
    with pytest.raises(dg.DatagenError):
        dg.gen_var(n=4, L=1, rank_constraint=4, total_points=2000)


def test_unstable_after_rejections():
    rng = np.random.default_rng(0)
    inst = np.tril(np.full((8, 8), 0.99), -1)
    with pytest.raises(dg.UnstableSpecError):
        dg.sample_transitions(rng, 8, 2, instantaneous=inst)


def test_too_few_points():
    with pytest.raises(dg.DatagenError):
        dg.gen_var(total_points=999)


def test_gaussian_variant_kind():
    ds = dg.gen_var(total_points=2000, noise_family="gaussian", seed=0)
    assert ds.kind == "viol-gauss" and ds.spec.noise_family == "gaussian"


def test_np_defaults_and_single_regime():
    ds = dg.gen_np(total_points=2000, num_regimes=1, seed=1)
    assert np.all(ds.u == 0)
    assert ds.spec.num_regimes == 1


def test_np_default_sizes():
    ds = dg.gen_np()
    assert ds.x.shape == (150_000, 3, 8)
    assert ds.num_regimes == 20
    assert set(np.unique(ds.u)) == set(range(20))


def test_np_variances_in_unit_interval(np_sparse):
    v = np_sparse.spec.variances
    assert np.all((v > 0) & (v <= 1))


def test_np_regime_residual_variances_differ():
    ds = dg.gen_np(total_points=20_000, num_regimes=5, seed=7)
    z = ds.z
    lags = z[:, :-1][:, ::-1]
    resid = z[:, -1] - ds.spec.mean(lags)
    per = np.array([resid[ds.u == r].var(axis=0) for r in range(5)])
    ratio = per.max(axis=0) / per.min(axis=0)
    assert np.all(ratio > 1.2)


def test_sparse_mask_matches_probe(np_sparse):
    spec = np_sparse.spec
    rng = np.random.default_rng(0)
    base = rng.standard_normal((16, spec.L, spec.n))
    f0 = spec.mean(base)
    probed = np.zeros_like(spec.mask)
    for tau in range(spec.L):
        for j in range(spec.n):
            bumped = base.copy()
            bumped[:, tau, j] += 0.7
            probed[:, tau, j] = np.any(spec.mean(bumped) != f0, axis=0)
    assert np.array_equal(probed, spec.mask)
    assert np.all(spec.mask.reshape(spec.n, -1).sum(axis=1) >= 1)


def test_regime_variant_default():
    ds = dg.gen_regime_variant()
    assert ds.x.shape[0] == 240_000
    assert ds.spec.transitions.shape == (5, 2, 8, 8)
    assert ds.spec.noise_family == "laplace" and ds.spec.noise_scale == 0.1


def test_regime_variant_single_regime_matches_var():
    a = dg.gen_regime_variant(total_points=2000, num_regimes=1, seed=6)
    b = dg.gen_var(total_points=2000, seed=6)
    assert np.array_equal(a.spec.B, b.spec.B)


def test_regime_variant_hand_set_autocorrelations():
    B = np.array([[[[0.6, 0.0], [0.0, -0.3]]], [[[-0.4, 0.0], [0.0, 0.2]]]])
    ds = dg.gen_regime_variant(n=2, L=1, total_points=40_000, num_regimes=2, seed=1,
                               transitions=B)
    for r in range(2):
        sel = ds.u == r
        for i in range(2):
            rho = np.corrcoef(ds.z[sel, 0, i], ds.z[sel, 1, i])[0, 1]
            assert abs(rho - B[r, 0, i, i]) < 0.05


def test_instantaneous_default():
    ds = dg.gen_instantaneous()
    assert ds.x.shape[0] == 45_000
    A = ds.spec.instantaneous
    # acyclic: nilpotent adjacency
    assert np.allclose(np.linalg.matrix_power(np.abs(A) > 0, 8).astype(float), 0)


def test_instantaneous_zero_reduces_to_var():
    a = dg.gen_instantaneous(total_points=3000, seed=8, instantaneous=np.zeros((8, 8)))
    b = dg.gen_var(total_points=3000, seed=8)
    assert np.array_equal(a.z, b.z) and np.array_equal(a.x, b.x)


def test_instantaneous_coefficient_by_regression():
    A = np.array([[0.0, 0.0], [0.5, 0.0]])
    ds = dg.gen_instantaneous(n=2, L=1, total_points=20_000, seed=2, instantaneous=A,
                              transitions=np.zeros((1, 2, 2)))
    z = ds.z[:, -1]
    coef = np.linalg.lstsq(z[:, :1], z[:, 1], rcond=None)[0][0]
    assert abs(coef - 0.5) < 0.02


def test_identity_mixing_on_nonnegative():
    g = dg.MixingFunction.identity(3)
    z = np.abs(np.random.default_rng(0).standard_normal((50, 3)))
    assert np.array_equal(dg.mix(z, g), z)


def test_mixing_injective_on_rows(var_small):
    x = dg.mix(np.random.default_rng(1).standard_normal((10_000, 8)), var_small.mixing)
    assert len(np.unique(x, axis=0)) == 10_000


def test_mixing_deterministic(var_small):
    z = np.tile(var_small.z[:1, 0], (4, 1))
    x = dg.mix(z, var_small.mixing)
    assert np.all(x == x[0])


def test_mixing_rejects_ill_conditioned():
    w = np.eye(3)
    w[2, 2] = 0.05
    with pytest.raises(dg.DatagenError):
        dg.MixingFunction([w, np.eye(3), np.eye(3)], [np.zeros(3)] * 3)


def test_mix_width_mismatch():
    with pytest.raises(dg.DatagenError):
        dg.mix(np.zeros((2, 4)), dg.MixingFunction.identity(3))


def test_mixing_singular_values(var_small):
    for w in var_small.mixing.weights:
        assert np.linalg.svd(w, compute_uv=False).min() >= 0.1


@pytest.mark.parametrize("kind", ["var", "np", "viol-lowrank", "viol-inst"])
def test_save_load_round_trip(tmp_path, kind):
    ds = dg.generate(kind, seed=1, points=1500)
    dg.save(ds, tmp_path)
    back = dg.load(tmp_path)
    assert back.kind == ds.kind
    for name in ("x", "z", "u"):
        assert np.array_equal(getattr(back, name), getattr(ds, name))
    assert back.u.dtype == np.uint32
    assert back.manifest() == ds.manifest()
    assert json.dumps(back.spec.to_json()) == json.dumps(ds.spec.to_json())
    for a, b in zip(back.mixing.weights, ds.mixing.weights):
        assert np.array_equal(a, b)


def test_truncated_payload(tmp_path, var_small):
    dg.save(var_small, tmp_path)
    raw = (tmp_path / "x.bin").read_bytes()
    (tmp_path / "x.bin").write_bytes(raw[:-8])
    with pytest.raises(dg.DatasetFormatError, match="expected"):
        dg.load(tmp_path)


def test_unknown_version(tmp_path, var_small):
    dg.save(var_small, tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["format_version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(dg.UnsupportedVersionError):
        dg.load(tmp_path)


def test_split_is_partition(var_small):
    tr, va, te = var_small.split()
    allidx = np.concatenate([tr, va, te])
    assert np.array_equal(np.sort(allidx), np.arange(var_small.num_windows))
    assert len(tr) == 4000 and len(va) == 500


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_regime_labels_partition(R, seed):
    ds = dg.gen_np(n=2, L=1, total_points=1000, num_regimes=R, seed=seed,
                   windows_per_sequence=50)
    labels = set(np.unique(ds.u).tolist())
    assert labels == set(range(R))
    assert len(ds.u) * ds.window_len == ds.manifest()["num_windows"] * ds.window_len


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_windows_overlap_consistently(seed):
    ds = dg.gen_var(n=3, L=2, total_points=1000, seed=seed)
    # consecutive windows within a sequence share L rows
    assert np.array_equal(ds.z[1, :-1], ds.z[0, 1:])
