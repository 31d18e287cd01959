import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leap import datagen as dg
from leap import evaluate as ev
from leap import prior as pr


def _brute(cost):
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def test_hungarian_matches_brute_force():
    rng = np.random.default_rng(0)
    for k in range(200):
        n = 1 + k % 6
        cost = rng.random((n, n))
        perm = ev.hungarian(cost)
        assert sorted(perm) == list(range(n))
        assert ev.assignment_cost(cost, perm) == pytest.approx(_brute(cost), abs=1e-12)


def test_hungarian_ties_resolve_to_identity():
    assert ev.hungarian(np.zeros((4, 4))).tolist() == [0, 1, 2, 3]


def test_hungarian_rejects_bad_input():
    with pytest.raises(ev.EvalError):
        ev.hungarian(np.zeros((2, 3)))
    with pytest.raises(ev.EvalError):
        ev.hungarian(np.array([[np.nan]]))


@pytest.fixture(scope="module")
def sample():
    return np.random.default_rng(1).laplace(size=(2000, 4))


def test_mcc_self_is_one(sample):
    assert ev.mcc(sample, sample).mcc == pytest.approx(1.0, abs=1e-12)


def test_mcc_invariances(sample):
    rng = np.random.default_rng(2)
    perm = rng.permutation(4)
    signs = np.array([1.0, -1.0, -1.0, 1.0])
    scales = rng.uniform(0.1, 10, 4)
    est = (sample * signs * scales + rng.normal(size=4))[:, perm]
    res = ev.mcc(est, sample)
    assert res.mcc == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(perm[res.permutation], np.arange(4))


def test_spearman_ignores_monotone_warps(sample):
    warped = np.stack([np.exp(sample[:, 0]), sample[:, 1] ** 3,
                       np.tanh(sample[:, 2]), -sample[:, 3]], axis=1)
    assert ev.mcc(warped, sample, "spearman").mcc == pytest.approx(1.0, abs=1e-12)
    assert ev.mcc(warped, sample, "pearson").mcc < 0.99


def test_independent_estimate_scores_low(sample):
    other = np.random.default_rng(3).standard_normal(sample.shape)
    assert ev.mcc(other, sample).mcc < 0.1


def test_constant_column_warns(sample):
    est = sample.copy()
    est[:, 2] = 1.0
    with pytest.warns(RuntimeWarning):
        res = ev.mcc(est, sample)
    assert np.all(res.correlations[:, 2] == 0.0)


def test_correlation_input_checks():
    with pytest.raises(ev.EvalError):
        ev.correlation_matrix(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ev.EvalError):
        ev.correlation_matrix(np.zeros((5, 2)), np.zeros((5, 3)))
    with pytest.raises(ev.EvalError):
        ev.correlation_matrix(np.ones((5, 2)), np.ones((5, 2)), "kendall")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mcc_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((50, 3)), rng.standard_normal((50, 3))
    assert 0.0 <= ev.mcc(a, b).mcc <= 1.0


def test_shd_counts_mismatches():
    a = np.zeros((2, 3, 3), dtype=int)
    b = a.copy()
    b[0, 1, 2] = 1
    b[1, 0, 0] = 1
    assert ev.shd(a, b) == 2
    assert ev.shd(a, a) == 0
    with pytest.raises(ev.EvalError):
        ev.shd(a, np.zeros((1, 3, 3)))


def test_skeleton_from_mask_gates():
    t = pr.NpInverseTransition(np.random.default_rng(0), 3, 2)
    t.gamma.data[...] = -10.0
    t.gamma.data[0, 1, 2] = 10.0        # target 0, lag 2, source 2
    skel = ev.extract_skeleton(t)
    assert skel.shape == (2, 3, 3)
    assert ev.skeleton_edges(skel) == [{"lag": 2, "source": 2, "target": 0}]


def test_mask_to_skeleton_layout():
    mask = np.zeros((3, 2, 3))
    mask[1, 0, 2] = 1
    skel = ev.mask_to_skeleton(mask)
    assert skel[0, 1, 2] == 1 and skel.sum() == 1


def test_alignment_recovers_scaled_permuted_matrices():
    rng = np.random.default_rng(4)
    n, L = 3, 2
    B = rng.uniform(-0.4, 0.4, (L, n, n))
    z = rng.standard_normal((1000, n))
    perm = np.array([2, 0, 1])
    d = np.array([2.0, -0.5, 3.0])
    z_hat = np.empty_like(z)
    z_hat[:, perm] = z * d
    B_hat = np.empty_like(B)
    for j in range(n):
        for k in range(n):
            B_hat[:, perm[j], perm[k]] = d[j] * B[:, j, k] / d[k]
    al = ev.align_transition(B_hat, B, z_hat, z)
    assert al.max_error < 1e-10
    assert al.r2 == pytest.approx(1.0)


def test_variability_full_rank_on_default_spec():
    ds = dg.gen_np(n=8, L=2, total_points=4000, num_regimes=20, seed=0)
    res = ev.variability_rank(ds.spec, ds.z[0])
    assert res.required == 16
    assert res.rank == 16 and res.passed


def test_variability_probe_invariance():
    ds = dg.gen_np(n=4, L=2, total_points=2000, num_regimes=12, seed=1)
    a = ev.variability_rank(ds.spec, ds.z[0])
    b = ev.variability_rank(ds.spec, ds.z[5])
    assert a.rank == b.rank


def test_variability_single_regime_fails():
    ds = dg.gen_np(n=4, L=2, total_points=2000, num_regimes=1, seed=2)
    res = ev.variability_rank(ds.spec, ds.z[0])
    assert not res.passed


def test_report_json(tmp_path):
    rep = ev.EvalReport(0.9, "pearson", [0, 1], [[1.0, 0.0], [0.0, 1.0]])
    rep.save(tmp_path / "eval.json")
    text = (tmp_path / "eval.json").read_text()
    assert '"mcc": 0.9' in text and "shd" not in text
