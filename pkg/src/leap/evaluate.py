"""Identifiability and structure metrics."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata


class EvalError(Exception):
    pass


# -- assignment -----------------------------------------------------------
def _assignment(cost):
    """Shortest augmenting path assignment; returns col index per row."""
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)      # p[j] = row matched to column j (1-based)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    cols = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        cols[p[j] - 1] = j - 1
    return cols


def hungarian(cost, tol=1e-12):
    """Minimum-cost perfect assignment ``perm`` (row i -> column perm[i]).

    Among optimal assignments the lexicographically smallest is returned,
    found by fixing rows in order to the lowest column that keeps the
    optimum.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise EvalError(f"cost must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise EvalError("cost matrix has non-finite entries")
    n = cost.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int)
    best = cost[np.arange(n), _assignment(cost)].sum()
    slack = tol * max(1.0, np.abs(cost).sum())
    perm = np.empty(n, dtype=int)
    rows = list(range(n))
    cols = list(range(n))
    fixed = 0.0
    for i in range(n):
        rest_rows = rows[1:]
        for j in cols:
            rest_cols = [c for c in cols if c != j]
            sub = cost[np.ix_(rest_rows, rest_cols)]
            rest = sub[np.arange(len(rest_rows)), _assignment(sub)].sum() if rest_rows else 0.0
            if fixed + cost[i, j] + rest <= best + slack:
                perm[i] = j
                fixed += cost[i, j]
                cols = rest_cols
                break
        rows = rest_rows
    return perm


def assignment_cost(cost, perm):
    cost = np.asarray(cost, dtype=float)
    return float(cost[np.arange(len(perm)), perm].sum())


# -- correlation ----------------------------------------------------------
def _standardize(a):
    a = a - a.mean(axis=0)
    norm = np.sqrt((a * a).sum(axis=0))
    constant = norm == 0
    norm[constant] = 1.0
    return a / norm, constant


def correlation_matrix(z_true, z_hat, method="pearson"):
    """``|corr(z_true[:, i], z_hat[:, j])|`` as an n x n matrix."""
    z_true = np.asarray(z_true, dtype=float)
    z_hat = np.asarray(z_hat, dtype=float)
    if z_true.shape != z_hat.shape or z_true.ndim != 2:
        raise EvalError(f"sample shapes differ: {z_true.shape} vs {z_hat.shape}")
    if z_true.shape[0] < 3:
        raise EvalError("need at least 3 samples")
    if method == "spearman":
        z_true = rankdata(z_true, axis=0)
        z_hat = rankdata(z_hat, axis=0)
    elif method != "pearson":
        raise EvalError(f"unknown correlation method {method!r}")
    a, ca = _standardize(z_true)
    b, cb = _standardize(z_hat)
    if ca.any() or cb.any():
        warnings.warn("constant column: its correlations are set to 0", RuntimeWarning,
                      stacklevel=3)
    corr = np.clip(np.abs(a.T @ b), 0.0, 1.0)
    corr[ca, :] = 0.0
    corr[:, cb] = 0.0
    return corr


@dataclass
class MccResult:
    mcc: float
    permutation: np.ndarray   # true index i -> estimated index permutation[i]
    correlations: np.ndarray  # |corr| with rows = true, columns = estimated


def mcc(z_hat, z_true, method="pearson"):
    """Mean absolute correlation after the optimal one-to-one matching."""
    corr = correlation_matrix(z_true, z_hat, method)
    perm = hungarian(1.0 - corr)
    return MccResult(float(corr[np.arange(len(perm)), perm].mean()), perm, corr)


# -- structure ------------------------------------------------------------
def shd(a, b):
    """Hamming distance between per-lag directed adjacency stacks (L, n, n)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise EvalError(f"skeleton shapes differ: {a.shape} vs {b.shape}")
    return int(np.count_nonzero((a != 0) != (b != 0)))


def mask_to_skeleton(mask):
    """(n, L, n) parent mask [target, lag, source] -> (L, n, n) [lag, target, source]."""
    return (np.transpose(np.asarray(mask), (1, 0, 2)) != 0).astype(np.int8)


def relabel(values, permutation):
    """Express estimated-latent indexed (L, n, n) values in true-latent order."""
    p = np.asarray(permutation)
    return np.asarray(values)[:, p][:, :, p]


def extract_skeleton(transition, threshold=0.1, permutation=None, aligned=None):
    """Binary (L, n, n) adjacency: NP from mask gates, VAR from |transition| entries.

    ``aligned`` supplies VAR matrices already mapped to true order (see
    ``align_transition``); otherwise ``permutation`` relabels estimated
    latents into true order.
    """
    if aligned is not None:
        values = np.abs(np.asarray(aligned))
    else:
        if transition.kind == "np":
            values = np.transpose(transition.mask(), (1, 0, 2))
        else:
            values = np.abs(transition.matrices())
        if permutation is not None:
            values = relabel(values, permutation)
    return (values >= threshold).astype(np.int8)


def skeleton_edges(skel):
    """JSON-friendly edge list: (lag, source, target)."""
    return [{"lag": int(t) + 1, "source": int(j), "target": int(i)}
            for t, i, j in zip(*np.nonzero(skel))]


@dataclass
class Alignment:
    matrices: np.ndarray   # estimate mapped onto the true latent order and scale
    max_error: float
    mean_error: float
    r2: float


def align_transition(B_hat, B, z_hat, z_true, permutation=None):
    """Undo permutation, sign and scale of estimated lag matrices.

    If the estimated latents satisfy ``z_hat[:, p[j]] ~ d_j z[:, j]`` the
    estimated matrices obey ``B_hat[p_j, p_k] = d_j B[j, k] / d_k``; the
    scales ``d`` come from regressing each matched estimate on its truth.
    """
    B_hat = np.asarray(B_hat, dtype=float)
    B = np.asarray(B, dtype=float)
    z_hat = np.asarray(z_hat, dtype=float)
    z_true = np.asarray(z_true, dtype=float)
    if B_hat.shape != B.shape:
        raise EvalError(f"matrix shapes differ: {B_hat.shape} vs {B.shape}")
    if permutation is None:
        permutation = mcc(z_hat, z_true).permutation
    p = np.asarray(permutation)
    zt = z_true - z_true.mean(axis=0)
    zh = z_hat[:, p] - z_hat[:, p].mean(axis=0)
    d = (zh * zt).sum(axis=0) / (zt * zt).sum(axis=0)
    if np.any(np.abs(d) < 1e-6):
        raise EvalError("near-zero latent scale; cannot align")
    adjusted = relabel(B_hat, p) * d[None, None, :] / d[None, :, None]
    err = np.abs(adjusted - B)
    ss_res = float(((adjusted - B) ** 2).sum())
    ss_tot = float(((B - B.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")
    return Alignment(adjusted, float(err.max()), float(err.mean()), r2)


# -- sufficient variability ------------------------------------------------
@dataclass
class VariabilityResult:
    rank: int
    required: int
    passed: bool
    singular_values: list = field(default_factory=list)


def variability_vectors(spec, z_probe):
    """Per-regime ``[dq_i/dz_it, d2q_i/dz_it2]`` for the additive Gaussian process.

    ``z_probe`` is one window (L+1, n), oldest first.
    """
    z_probe = np.asarray(z_probe, dtype=float)
    current = z_probe[-1]
    lags = z_probe[-2::-1][: spec.L]
    mu = spec.mean(lags[None])[0]
    inv_var = 1.0 / spec.variances                       # (R, n)
    first = -(current - mu)[None, :] * inv_var
    second = -inv_var
    return np.concatenate([first, second], axis=1)       # (R, 2n)


def variability_rank(spec, z_probe, tol=1e-8):
    """Numerical rank of the stacked regime-difference vectors against 2n."""
    required = 2 * spec.n
    if spec.num_regimes < 2:
        return VariabilityResult(0, required, False, [])
    w = variability_vectors(spec, z_probe)
    diffs = np.diff(w, axis=0).T                          # (2n, R-1)
    s = np.linalg.svd(diffs, compute_uv=False)
    rank = int(np.count_nonzero(s > tol * max(1.0, s.max(initial=0.0))))
    passed = rank == required and spec.num_regimes >= required + 1
    return VariabilityResult(rank, required, passed, s.tolist())


# -- report ---------------------------------------------------------------
@dataclass
class EvalReport:
    mcc: float
    method: str
    permutation: list
    correlations: list
    shd: int | None = None
    skeleton: list | None = None
    aligned_matrix_error: dict | None = None
    variability: dict | None = None

    def to_json(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
