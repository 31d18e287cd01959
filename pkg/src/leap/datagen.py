"""Synthetic temporally causal latent processes and their nonlinear mixtures.

Every dataset is a stack of overlapping windows of length ``L + 1`` cut
from independently simulated sequences. Each sequence draws its noise
from its own random stream keyed by ``(seed, sequence_index)``, so
generation is reproducible regardless of how sequences are scheduled.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
SLOPE = 0.2
MIN_SINGULAR = 0.1
MAX_REJECTIONS = 1000

# named random sub-streams
_TRANSITION, _MIXING, _SEQUENCE, _REGIME, _STRUCTURE, _SPLIT = range(6)

KINDS = ("var", "np", "viol-lowrank", "viol-gauss", "viol-regime", "viol-inst",
         "viol-variability")


class DatagenError(Exception):
    pass


class UnstableSpecError(DatagenError):
    pass


class DatasetFormatError(DatagenError):
    pass


class UnsupportedVersionError(DatasetFormatError):
    pass


def stream(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def leaky_relu(x, slope=SLOPE):
    return np.where(x > 0, x, slope * x)


# -- mixing ---------------------------------------------------------------
@dataclass
class MixingFunction:
    """Three-layer LeakyReLU MLP ``n -> n -> n -> obs_dim``."""

    weights: list
    biases: list
    slope: float = SLOPE

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise DatagenError("mixing needs exactly three layers")
        n = self.weights[0].shape[0]
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise DatagenError("bias width does not match its layer")
        if self.weights[0].shape[1] != n or self.weights[1].shape != (n, n):
            raise DatagenError("hidden layers must be n x n")
        if self.weights[2].shape[0] != n or self.weights[2].shape[1] < n:
            raise DatagenError("obs_dim must be at least n")
        for w in self.weights:
            smin = np.linalg.svd(w, compute_uv=False).min()
            if smin < MIN_SINGULAR:
                raise DatagenError(f"layer min singular value {smin:.3g} < {MIN_SINGULAR}")

    @property
    def n(self):
        return self.weights[0].shape[0]

    @property
    def obs_dim(self):
        return self.weights[2].shape[1]

    def __call__(self, z):
        return mix(z, self)

    @classmethod
    def identity(cls, n):
        eye = np.eye(n)
        return cls([eye, eye, eye], [np.zeros(n)] * 3)

    @classmethod
    def random(cls, n, rng, obs_dim=None, whiten=None):
        """Random injective mixing; an (n, n) ``whiten`` map is folded into layer one."""
        obs_dim = obs_dim or n
        mats = [_well_conditioned(rng, n, n, whiten), _well_conditioned(rng, n, n),
                _well_conditioned(rng, n, obs_dim)]
        return cls(mats, [np.zeros(n), np.zeros(n), np.zeros(obs_dim)])

    def to_json(self):
        return {"weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases], "slope": self.slope}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["weights"], obj["biases"], obj["slope"])


def standardize_output(g, x):
    """Fold a per-dimension affine map into the last layer so ``x`` is zero mean, unit scale."""
    mean, std = x.mean(axis=0), x.std(axis=0)
    weights, biases = list(g.weights), list(g.biases)
    weights[2] = weights[2] / std
    biases[2] = (biases[2] - mean) / std
    return MixingFunction(weights, biases, g.slope)


def whitening(samples):
    """Symmetric inverse square root of the sample covariance."""
    vals, vecs = np.linalg.eigh(np.atleast_2d(np.cov(samples, rowvar=False)))
    if vals.min() <= 0:
        raise DatagenError("latent covariance is singular")
    return (vecs / np.sqrt(vals)) @ vecs.T


def _well_conditioned(rng, rows, cols, pre=None):
    # Haar-random orthonormal layers keep every direction of the latents
    # visible after three stacked layers; the floor check stays as a guard
    big, small = max(rows, cols), min(rows, cols)
    for _ in range(MAX_REJECTIONS):
        q, r = np.linalg.qr(rng.standard_normal((big, small)))
        w = q * np.sign(np.diag(r))
        if rows < cols:
            w = w.T
        if pre is not None:
            w = pre @ w
        if np.linalg.svd(w, compute_uv=False).min() >= MIN_SINGULAR:
            return w
    raise DatagenError("could not draw a well-conditioned mixing layer")


def mix(z, g):
    """Apply the mixing row-wise to latents of shape (..., n)."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != g.n:
        raise DatagenError(f"latent width {z.shape[-1]} != mixing input {g.n}")
    w1, w2, w3 = g.weights
    b1, b2, b3 = g.biases
    h = leaky_relu(z @ w1 + b1, g.slope)
    h = leaky_relu(h @ w2 + b2, g.slope)
    return h @ w3 + b3


# -- process specs --------------------------------------------------------
@dataclass
class VarProcessSpec:
    """Linear additive transitions; ``transitions`` has shape (R, L, n, n).

    R > 1 only for the regime-variant dataset. ``instantaneous`` holds the
    acyclic within-step coefficient matrix of the instantaneous variant.
    """

    n: int
    L: int
    transitions: np.ndarray
    noise_family: str = "laplace"
    noise_scale: float = 0.1
    rank_constraint: int | None = None
    instantaneous: np.ndarray | None = None

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=float)
        if self.transitions.ndim == 3:
            self.transitions = self.transitions[None]
        if self.transitions.shape[1:] != (self.L, self.n, self.n):
            raise DatagenError(f"transitions shape {self.transitions.shape} "
                               f"does not match L={self.L}, n={self.n}")
        if self.noise_family not in ("laplace", "gaussian"):
            raise DatagenError(f"unknown noise family {self.noise_family!r}")
        if self.instantaneous is not None:
            self.instantaneous = np.asarray(self.instantaneous, dtype=float)

    @property
    def B(self):
        return self.transitions[0]

    def effective(self, r=0):
        """Lagged transitions after solving out instantaneous effects."""
        b = self.transitions[r]
        if self.instantaneous is None or not self.instantaneous.any():
            return b
        return np.linalg.solve(np.eye(self.n) - self.instantaneous, b)

    def to_json(self):
        return {"process": "var", "n": self.n, "L": self.L,
                "transitions": self.transitions.tolist(),
                "noise_family": self.noise_family, "noise_scale": self.noise_scale,
                "rank_constraint": self.rank_constraint,
                "instantaneous": None if self.instantaneous is None
                else self.instantaneous.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["n"], obj["L"], np.array(obj["transitions"]), obj["noise_family"],
                   obj["noise_scale"], obj["rank_constraint"],
                   None if obj["instantaneous"] is None else np.array(obj["instantaneous"]))


@dataclass
class NpProcessSpec:
    """Per-latent 2-layer LeakyReLU transitions plus regime-scaled Gaussian noise.

    ``z_it = f_i(mask_i * lags) + sqrt(variances[u, i]) * e_it`` with
    ``e_it ~ N(0, 1)``. ``mask[i, tau - 1, j]`` marks ``z_j(t - tau)`` as a
    parent of ``z_i(t)``.
    """

    n: int
    L: int
    w1: np.ndarray          # (n, L*n, hidden)
    b1: np.ndarray          # (n, hidden)
    w2: np.ndarray          # (n, hidden)
    b2: np.ndarray          # (n,)
    mask: np.ndarray        # (n, L, n)
    variances: np.ndarray   # (R, n)
    slope: float = SLOPE

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2", "mask", "variances"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.variances.ndim != 2 or len(self.variances) < 1:
            raise DatagenError("need at least one regime")
        if np.any(self.variances <= 0) or np.any(self.variances > 1):
            raise DatagenError("regime variances must lie in (0, 1]")

    @property
    def num_regimes(self):
        return len(self.variances)

    @property
    def hidden(self):
        return self.w1.shape[-1]

    def mean(self, lags):
        """Transition means for lags of shape (..., L, n), lags[..., tau-1, :] = z(t - tau)."""
        lags = np.asarray(lags, dtype=float)
        masked = lags[..., None, :, :] * self.mask        # (..., n_target, L, n)
        flat = masked.reshape(masked.shape[:-2] + (self.L * self.n,))
        h = leaky_relu(np.einsum("...ik,ikh->...ih", flat, self.w1) + self.b1, self.slope)
        return np.einsum("...ih,ih->...i", h, self.w2) + self.b2

    def to_json(self):
        return {"process": "np", "n": self.n, "L": self.L, "w1": self.w1.tolist(),
                "b1": self.b1.tolist(), "w2": self.w2.tolist(), "b2": self.b2.tolist(),
                "mask": self.mask.astype(int).tolist(),
                "variances": self.variances.tolist(), "slope": self.slope,
                "hidden": self.hidden, "noise_family": "gaussian"}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["n"], obj["L"], obj["w1"], obj["b1"], obj["w2"], obj["b2"],
                   obj["mask"], obj["variances"], obj["slope"])


def spec_from_json(obj):
    if obj["process"] == "var":
        return VarProcessSpec.from_json(obj)
    if obj["process"] == "np":
        return NpProcessSpec.from_json(obj)
    raise DatasetFormatError(f"unknown process {obj['process']!r}")


# -- dataset --------------------------------------------------------------
@dataclass
class LatentDataset:
    """Windows of observations ``x`` (N, L+1, obs_dim), latents ``z`` (N, L+1, n)
    and per-window regime labels ``u`` (N,)."""

    kind: str
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    spec: VarProcessSpec | NpProcessSpec
    mixing: MixingFunction
    seed: int
    num_regimes: int
    params: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.z.shape[-1]

    @property
    def obs_dim(self):
        return self.x.shape[-1]

    @property
    def L(self):
        return self.spec.L

    @property
    def num_windows(self):
        return len(self.x)

    @property
    def window_len(self):
        return self.x.shape[1]

    @property
    def method(self):
        """Correlation used for MCC on this dataset."""
        return "spearman" if isinstance(self.spec, NpProcessSpec) else "pearson"

    def manifest(self):
        return {"format_version": FORMAT_VERSION, "kind": self.kind, "n": self.n,
                "obs_dim": self.obs_dim, "L": self.L, "num_regimes": self.num_regimes,
                "num_windows": self.num_windows, "window_len": self.window_len,
                "total_points": self.num_windows, "seed": self.seed, "spec": self.params}

    def split(self, fractions=(0.8, 0.1, 0.1)):
        """Seeded window-level train/val/test index arrays."""
        perm = stream(self.seed, _SPLIT).permutation(self.num_windows)
        n_train = int(round(fractions[0] * self.num_windows))
        n_val = int(round(fractions[1] * self.num_windows))
        return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def _windows(seq, L):
    # seq: (S, steps, d) -> (S * (steps - L), L + 1, d)
    S, steps, d = seq.shape
    idx = np.arange(steps - L)[:, None] + np.arange(L + 1)[None, :]
    return seq[:, idx, :].reshape(S * (steps - L), L + 1, d)


def _layout(total_points, L, windows_per_sequence):
    num_seq = math.ceil(total_points / windows_per_sequence)
    return num_seq, windows_per_sequence + L


def _assign_regimes(seed, num_seq, num_regimes):
    labels = np.arange(num_seq) % num_regimes
    return stream(seed, _REGIME).permutation(labels).astype(np.uint32)


def _finish(kind, seed, spec, z_seq, u_seq, total_points, num_regimes, params, mixing=None):
    L = spec.L
    z = _windows(z_seq, L)[:total_points]
    u = np.repeat(u_seq, z_seq.shape[1] - L)[:total_points].astype(np.uint32)
    if mixing is None:
        flat = z_seq.reshape(-1, spec.n)
        mixing = MixingFunction.random(spec.n, stream(seed, _MIXING), whiten=whitening(flat))
        mixing = standardize_output(mixing, mix(flat, mixing))
    x = mix(z, mixing)
    return LatentDataset(kind, x, z, u, spec, mixing, int(seed), int(num_regimes), params)


# -- VAR family -----------------------------------------------------------
def companion_radius(transitions):
    """Spectral radius of the companion matrix of lag matrices (L, n, n)."""
    transitions = np.asarray(transitions, dtype=float)
    L, n, _ = transitions.shape
    comp = np.zeros((L * n, L * n))
    comp[:n, :] = np.concatenate(list(transitions), axis=1)
    if L > 1:
        comp[n:, :-n] = np.eye((L - 1) * n)
    return float(np.abs(np.linalg.eigvals(comp)).max())


def _low_rank(rng, n, rank):
    u = rng.uniform(-1, 1, (n, rank))
    v = rng.uniform(-1, 1, (rank, n))
    b = u @ v
    return 0.5 * b / np.abs(b).max()


def sample_transitions(rng, n, L, rank_constraint=None, instantaneous=None):
    """Rejection-sample lag matrices with entries in [-0.5, 0.5] until stationary."""
    if rank_constraint is not None and not 1 <= rank_constraint < n:
        raise DatagenError(f"rank constraint {rank_constraint} incompatible with n={n}")
    solve = None
    if instantaneous is not None and np.any(instantaneous):
        solve = np.eye(n) - instantaneous
    for _ in range(MAX_REJECTIONS):
        b = rng.uniform(-0.5, 0.5, (L, n, n))
        if rank_constraint is not None:
            b[0] = _low_rank(rng, n, rank_constraint)
        eff = b if solve is None else np.linalg.solve(solve, b)
        if companion_radius(eff) < 1.0:
            return b
    raise UnstableSpecError(f"no stationary transitions after {MAX_REJECTIONS} draws")


def _draw_noise(rng, family, scale, size):
    if family == "laplace":
        return rng.laplace(0.0, scale, size)
    return rng.normal(0.0, scale, size)


def _simulate_var(spec, seed, u_seq, steps, burn_in):
    n, L = spec.n, spec.L
    S = len(u_seq)
    noise = np.stack([_draw_noise(stream(seed, _SEQUENCE, s), spec.noise_family,
                                  spec.noise_scale, (burn_in + steps, n))
                      for s in range(S)])
    mix_inst = None
    if spec.instantaneous is not None and np.any(spec.instantaneous):
        mix_inst = np.linalg.inv(np.eye(n) - spec.instantaneous)
    B = spec.transitions[u_seq.astype(int)]                  # (S, L, n, n)
    hist = np.zeros((S, L, n))                               # hist[:, tau-1] = z(t - tau)
    out = np.empty((S, steps, n))
    for t in range(burn_in + steps):
        drive = np.einsum("slij,slj->si", B, hist) + noise[:, t]
        z = drive if mix_inst is None else drive @ mix_inst.T
        hist = np.concatenate([z[:, None], hist[:, :-1]], axis=1)
        if t >= burn_in:
            out[:, t - burn_in] = z
    return out


def _check_points(total_points, n):
    if total_points < 1000:
        raise DatagenError("total_points must be at least 1000")
    if n < 2:
        raise DatagenError("need n >= 2")


def _var_dataset(kind, n, L, total_points, seed, num_regimes, noise_family, noise_scale,
                 rank_constraint, transitions, instantaneous, windows_per_sequence,
                 burn_in, extra):
    _check_points(total_points, n)
    if transitions is None:
        rng = stream(seed, _TRANSITION)
        transitions = np.stack([
            sample_transitions(rng, n, L, rank_constraint, instantaneous)
            for _ in range(num_regimes)])
    transitions = np.asarray(transitions, dtype=float)
    if transitions.ndim == 3:
        transitions = transitions[None]
    spec = VarProcessSpec(n, L, transitions, noise_family, noise_scale, rank_constraint,
                          instantaneous)
    num_seq, steps = _layout(total_points, L, windows_per_sequence)
    u_seq = _assign_regimes(seed, num_seq, num_regimes)
    z_seq = _simulate_var(spec, seed, u_seq, steps, burn_in)
    params = {"n": n, "L": L, "total_points": total_points, "noise_family": noise_family,
              "noise_scale": noise_scale, "rank_constraint": rank_constraint,
              "windows_per_sequence": windows_per_sequence, "burn_in": burn_in, **extra}
    return _finish(kind, seed, spec, z_seq, u_seq, total_points, num_regimes, params)


def gen_var(n=8, L=2, total_points=50_000, seed=0, noise_family="laplace",
            rank_constraint=None, noise_scale=0.1, transitions=None,
            windows_per_sequence=100, burn_in=100):
    """Stationary VAR latents with i.i.d. Laplace (or Gaussian) noise."""
    if transitions is None and rank_constraint is not None and rank_constraint >= n:
        raise DatagenError(f"rank constraint {rank_constraint} incompatible with n={n}")
    kind = "var"
    if noise_family == "gaussian":
        kind = "viol-gauss"
    if rank_constraint is not None:
        kind = "viol-lowrank"
    return _var_dataset(kind, n, L, total_points, seed, 1, noise_family, noise_scale,
                        rank_constraint, transitions, None, windows_per_sequence, burn_in,
                        {})


def gen_regime_variant(n=8, L=2, total_points=240_000, num_regimes=5, seed=0,
                       transitions=None, noise_scale=0.1, windows_per_sequence=100,
                       burn_in=100):
    """VAR latents whose lag matrices change with the regime of each sequence."""
    if num_regimes < 1:
        raise DatagenError("num_regimes must be >= 1")
    return _var_dataset("viol-regime", n, L, total_points, seed, num_regimes, "laplace",
                        noise_scale, None, transitions, None, windows_per_sequence,
                        burn_in, {"num_regimes": num_regimes})


def random_dag(rng, n, edge_prob=0.5):
    """Strictly lower-triangular coefficients in [-0.5, 0.5] under a random node order."""
    lower = np.tril(rng.uniform(-0.5, 0.5, (n, n)) * (rng.random((n, n)) < edge_prob), -1)
    perm = rng.permutation(n)
    return lower[np.ix_(perm, perm)]


def gen_instantaneous(n=8, L=2, total_points=45_000, seed=0, instantaneous=None,
                      transitions=None, noise_scale=0.1, windows_per_sequence=100,
                      burn_in=100):
    """VAR latents with an additional acyclic within-step effect ``z_t = A z_t + ...``."""
    if instantaneous is None:
        instantaneous = random_dag(stream(seed, _STRUCTURE), n)
    instantaneous = np.asarray(instantaneous, dtype=float)
    if abs(np.linalg.det(np.eye(n) - instantaneous)) < 1e-12:
        raise DatagenError("I - A is singular")
    return _var_dataset("viol-inst", n, L, total_points, seed, 1, "laplace", noise_scale,
                        None, transitions, instantaneous, windows_per_sequence, burn_in, {})


# -- nonparametric family -------------------------------------------------
def random_np_spec(rng, n, L, num_regimes, hidden=32, sparse=False, edge_prob=0.25,
                   signal=0.6):
    """Draw transition MLPs, parent mask and regime variances.

    Output weights are scaled so each transition mean has standard deviation
    ``signal`` on standard normal lag inputs; a pilot run then shrinks the
    scale until trajectories stay bounded.
    """
    if sparse:
        mask = (rng.random((n, L, n)) < edge_prob).astype(float)
        for i in range(n):
            if not mask[i].any():
                mask[i, rng.integers(L), rng.integers(n)] = 1.0
    else:
        mask = np.ones((n, L, n))
    w1 = rng.uniform(-1, 1, (n, L * n, hidden))
    b1 = rng.uniform(-0.5, 0.5, (n, hidden))
    w2 = rng.uniform(-1, 1, (n, hidden))
    variances = 1.0 - rng.random((num_regimes, n))
    spec = NpProcessSpec(n, L, w1, b1, w2, np.zeros(n), mask, variances)
    probe = rng.standard_normal((4096, L, n))
    out = spec.mean(probe)
    spec.w2 = spec.w2 * (signal / out.std(axis=0))[:, None]
    pilot_noise = rng.standard_normal((2000, 16, n))
    for _ in range(50):
        spec.b2 = -spec.mean(probe).mean(axis=0)
        if _bounded(spec, pilot_noise):
            return spec
        spec.w2 = spec.w2 * 0.8
    raise UnstableSpecError("could not find a bounded nonparametric transition")


def _bounded(spec, noise, limit=50.0):
    hist = np.zeros((noise.shape[1], spec.L, spec.n))
    for e in noise:
        z = spec.mean(hist) + e
        if not np.all(np.abs(z) < limit):
            return False
        hist = np.concatenate([z[:, None], hist[:, :-1]], axis=1)
    return True


def _simulate_np(spec, seed, u_seq, steps, burn_in):
    n, L = spec.n, spec.L
    S = len(u_seq)
    noise = np.stack([stream(seed, _SEQUENCE, s).standard_normal((burn_in + steps, n))
                      for s in range(S)])
    scale = np.sqrt(spec.variances[u_seq.astype(int)])         # (S, n)
    hist = np.zeros((S, L, n))
    out = np.empty((S, steps, n))
    for t in range(burn_in + steps):
        z = spec.mean(hist) + scale * noise[:, t]
        hist = np.concatenate([z[:, None], hist[:, :-1]], axis=1)
        if t >= burn_in:
            out[:, t - burn_in] = z
    return out


def gen_np(n=8, L=2, total_points=150_000, num_regimes=20, sparse=False, seed=0,
           hidden=32, edge_prob=0.25, windows_per_sequence=100, burn_in=100, spec=None):
    """Nonparametric latents whose noise variance is modulated by the regime."""
    if num_regimes < 1:
        raise DatagenError("num_regimes must be >= 1")
    if n < 2:
        raise DatagenError("need n >= 2")
    if spec is None:
        spec = random_np_spec(stream(seed, _TRANSITION), n, L, num_regimes, hidden,
                              sparse, edge_prob)
    num_seq, steps = _layout(total_points, L, windows_per_sequence)
    u_seq = _assign_regimes(seed, num_seq, spec.num_regimes)
    z_seq = _simulate_np(spec, seed, u_seq, steps, burn_in)
    params = {"n": n, "L": L, "total_points": total_points, "num_regimes": num_regimes,
              "sparse": bool(sparse), "hidden": hidden, "edge_prob": edge_prob,
              "windows_per_sequence": windows_per_sequence, "burn_in": burn_in}
    return _finish("np", seed, spec, z_seq, u_seq, total_points, spec.num_regimes, params)


def generate(kind, seed=0, points=None, regimes=None, sparse=False, n=8, L=2):
    """Build any of the seven synthetic datasets with its default size."""
    kw = {"n": n, "L": L, "seed": seed}
    if points is not None:
        kw["total_points"] = points
    if kind == "var":
        return gen_var(**kw)
    if kind == "viol-gauss":
        return gen_var(noise_family="gaussian", **kw)
    if kind == "viol-lowrank":
        kw["L"] = 1
        return gen_var(rank_constraint=4 if n > 4 else max(1, n // 2), **kw)
    if kind == "viol-regime":
        return gen_regime_variant(num_regimes=regimes or 5, **kw)
    if kind == "viol-inst":
        return gen_instantaneous(**kw)
    if kind in ("np", "viol-variability"):
        ds = gen_np(num_regimes=regimes or (20 if kind == "np" else 5), sparse=sparse, **kw)
        if kind == "viol-variability":
            ds.kind = kind
        return ds
    raise DatagenError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")


# -- persistence ----------------------------------------------------------
def save(ds, directory):
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    (path / "manifest.json").write_text(json.dumps(ds.manifest(), indent=2), encoding="utf-8")
    (path / "x.bin").write_bytes(np.ascontiguousarray(ds.x, dtype="<f8").tobytes())
    (path / "z.bin").write_bytes(np.ascontiguousarray(ds.z, dtype="<f8").tobytes())
    (path / "u.bin").write_bytes(np.ascontiguousarray(ds.u, dtype="<u4").tobytes())
    truth = {"process": ds.spec.to_json(), "mixing": ds.mixing.to_json()}
    (path / "truth.json").write_text(json.dumps(truth), encoding="utf-8")


def _read(path, dtype, count, name):
    raw = np.fromfile(path, dtype=dtype)
    if raw.size != count:
        raise DatasetFormatError(f"{name}: expected {count} values, found {raw.size}")
    return raw


def load(directory):
    path = Path(directory)
    try:
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError as err:
        raise DatasetFormatError(f"no manifest.json in {path}") from err
    if manifest.get("format_version") != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"unsupported dataset format version {manifest.get('format_version')!r}")
    N, T = manifest["num_windows"], manifest["window_len"]
    n, obs = manifest["n"], manifest["obs_dim"]
    x = _read(path / "x.bin", "<f8", N * T * obs, "x.bin").reshape(N, T, obs)
    z = _read(path / "z.bin", "<f8", N * T * n, "z.bin").reshape(N, T, n)
    u = _read(path / "u.bin", "<u4", N, "u.bin")
    truth = json.loads((path / "truth.json").read_text(encoding="utf-8"))
    spec = spec_from_json(truth["process"])
    mixing = MixingFunction.from_json(truth["mixing"])
    return LatentDataset(manifest["kind"], x.astype(np.float64), z.astype(np.float64),
                         u.astype(np.uint32), spec, mixing, manifest["seed"],
                         manifest["num_regimes"], manifest["spec"])
