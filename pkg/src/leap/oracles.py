"""Fast self-checks that need no training: finite differences, round trips,
quadrature and brute-force comparisons."""
import itertools
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import datagen as dg
from . import diffcore as dc
from . import evaluate as ev
from . import prior as pr
from . import splineflow as sf
from .diffcore import Tensor
from .trainer import laplacian_logpdf


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    limit: float
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34} {self.value:.3g} (limit {self.limit:g})  {self.seconds:.1f}s"


# -- gradient fuzz --------------------------------------------------------
_UNARY = [
    lambda t: dc.tanh(t),
    lambda t: dc.sigmoid(t),
    lambda t: dc.softplus(t),
    lambda t: dc.exp(t * 0.5),
    lambda t: t * t + t,
    lambda t: dc.log(dc.softplus(t) + 1.0),
    lambda t: dc.softmax(t, axis=-1) * 3.0,
    lambda t: dc.cumsum(t, axis=-1),
    lambda t: dc.sqrt(t * t + 1.0),
]


def random_composition(rng):
    """A seeded scalar function of a (rows, cols) tensor and its input."""
    rows, cols, width = rng.integers(2, 5, size=3)
    w = rng.normal(0, 0.7, (cols, width))
    b = rng.normal(0, 0.3, width)
    ops = [int(k) for k in rng.integers(0, len(_UNARY), size=rng.integers(1, 4))]
    out_w = rng.normal(0, 1.0, (rows, width))

    def f(t):
        h = dc.linear(t, Tensor(w), Tensor(b))
        for k in ops:
            h = _UNARY[k](h)
        return (h * out_w).sum()

    return f, rng.normal(0, 0.8, (rows, cols))


def grad_fuzz(count=100, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        f, x = random_composition(rng)
        worst = max(worst, dc.grad_check(f, Tensor(x)))
    return worst


# -- splines --------------------------------------------------------------
def spline_round_trip(count=5, seed=1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        s = sf.LinearRationalSpline.random(rng)
        x = rng.uniform(-s.bound, s.bound, 1000)
        worst = max(worst, float(np.max(np.abs(s.inverse(s.forward(x)) - x))))
    return worst


def flow_normalization(seed=4, regimes=2, n=3):
    rng = np.random.default_rng(seed)
    bank = sf.FlowBank(n, regimes)
    for p in bank.raw:
        p.data[...] = rng.normal(0, 0.8, p.data.shape)
    grid = np.linspace(-8, 8, 16_001)
    rows = np.repeat(grid[:, None], n, axis=1)
    worst = 0.0
    with dc.no_grad():
        for u in range(regimes):
            base, logdet = bank.inverse(Tensor(rows), np.full(len(grid), u))
            dens = np.exp(-0.5 * base.data ** 2 - 0.5 * math.log(2 * math.pi) + logdet.data)
            worst = max(worst, float(np.max(np.abs(np.trapezoid(dens, grid, axis=0) - 1))))
    return worst


def flows_monotone(state):
    """Rebuild a bank from raw flow arrays and test strict monotonicity."""
    raw_w = np.asarray(state["flow.raw_w"])
    regimes, n, bins = raw_w.shape
    bank = sf.FlowBank(n, regimes, bins)
    bank.load_state(state)
    return bank.check_monotone(grid_points=2001)


# -- transition prior -----------------------------------------------------
def _np_transition(n, seed, hidden, net_scale=1.0):
    t = pr.NpInverseTransition(np.random.default_rng(seed), n, 1, hidden=hidden,
                               net_scale=net_scale)
    rng = np.random.default_rng(seed + 100)
    t.gamma.data[...] = rng.normal(0, 1, t.gamma.shape)
    t.alpha.data[...] = rng.normal(0, 0.3, t.alpha.shape)
    return t


def _prior_density(t, windows, chunk=200_000):
    out = []
    with dc.no_grad():
        for s in range(0, len(windows), chunk):
            part = windows[s:s + chunk]
            lp = pr.transition_logp(Tensor(part), np.zeros(len(part), dtype=int), t)
            out.append(np.exp(lp.data))
    return np.concatenate(out)


def prior_normalization_1d(seeds=(0, 1, 2)):
    grid = np.linspace(-25, 25, 200_001)
    worst = 0.0
    for seed in seeds:
        t = _np_transition(1, seed, 32)
        lag = np.random.default_rng(seed).normal()
        w = np.stack([np.full_like(grid, lag), grid], axis=1)[:, :, None]
        worst = max(worst, abs(np.trapezoid(_prior_density(t, w), grid) - 1.0))
    return float(worst)


def prior_normalization_2d(seed=4):
    t = _np_transition(2, seed, 8, net_scale=0.3)
    g = np.linspace(-12, 12, 1601)
    a, b = np.meshgrid(g, g, indexing="ij")
    cur = np.stack([a.ravel(), b.ravel()], axis=1)
    lag = np.broadcast_to(np.array([0.3, -0.7]), cur.shape)
    dens = _prior_density(t, np.stack([lag, cur], axis=1)).reshape(len(g), len(g))
    return float(abs(np.trapezoid(np.trapezoid(dens, g, axis=1), g) - 1.0))


# -- assignment and metrics ----------------------------------------------
def _brute_cost(cost):
    n = len(cost)
    return min(cost[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n)))


def hungarian_vs_brute(count=200, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        n = int(rng.integers(1, 7))
        cost = rng.uniform(0, 1, (n, n))
        worst = max(worst, abs(ev.assignment_cost(cost, ev.hungarian(cost)) - _brute_cost(cost)))
    return float(worst)


def laplacian_normalization():
    worst = 0.0
    for alpha, lam in [(1.0, 1.0), (1.5, 2.0), (0.8, 0.5), (1.9, 0.7)]:
        half = integrate.quad(lambda e: math.exp(laplacian_logpdf(e, alpha, lam)),
                              0.0, math.inf, limit=400)[0]
        worst = max(worst, abs(2.0 * half - 1.0))
    return worst


def mcc_invariance(seed=0, size=2000, n=5):
    """Largest deviation from 1 of MCC under permutation, sign, scale and warps."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((size, n))
    perm = rng.permutation(n)
    signs = rng.choice([-1.0, 1.0], n)
    scales = rng.uniform(0.2, 5.0, n)
    linear = z[:, perm] * signs * scales + rng.normal(0, 3, n)
    warped = np.column_stack([np.exp(z[:, 0]), z[:, 1] ** 3, np.tanh(z[:, 2]),
                              -np.arctan(z[:, 3]), 2 * z[:, 4] + z[:, 4] ** 3])[:, perm]
    return max(abs(ev.mcc(z, z).mcc - 1), abs(ev.mcc(linear, z).mcc - 1),
               abs(ev.mcc(linear, z, "spearman").mcc - 1),
               abs(ev.mcc(warped, z, "spearman").mcc - 1))


def variability(regimes, seed=0):
    ds = dg.gen_np(num_regimes=regimes, total_points=1000, seed=seed)
    return ev.variability_rank(ds.spec, ds.z[0])


# -- suite ----------------------------------------------------------------
def _timed(name, fn, limit):
    start = time.perf_counter()
    value = fn()
    return Check(name, bool(value <= limit), float(value), limit, time.perf_counter() - start)


def run_suite(flow_state=None):
    """Every check in order; ``flow_state`` adds a monotonicity check of saved flows."""
    checks = [
        _timed("grad_check fuzz (100 compositions)", grad_fuzz, 1e-4),
        _timed("spline round trip", spline_round_trip, 1e-8),
        _timed("flow quadrature normalization", flow_normalization, 1e-3),
        _timed("NP prior normalization 1-D", prior_normalization_1d, 1e-3),
        _timed("NP prior normalization 2-D", prior_normalization_2d, 1e-3),
        _timed("hungarian vs brute force", hungarian_vs_brute, 1e-12),
        _timed("generalized Laplacian quadrature", laplacian_normalization, 1e-6),
        _timed("MCC invariance suite", mcc_invariance, 1e-12),
    ]
    full = variability(20)
    checks.append(Check("variability rank, 20 regimes", full.passed, full.rank,
                        full.required))
    single = variability(1)
    checks.append(Check("variability rejects 1 regime", not single.passed, single.rank,
                        single.required))
    if flow_state is not None:
        ok = flows_monotone(flow_state)
        checks.append(Check("saved flows monotone", ok, float(ok), 1.0))
    return checks
