"""Componentwise linear rational spline flows for residual densities.

Each spline is monotone on [-bound, bound] and the identity outside it.
Inside a bin [x0, x1] the map is made of two linear-rational (Moebius)
pieces joined at an interior point placed at fraction ``lam`` of the bin.
With w0 = 1, the remaining weights follow from matching the boundary
derivatives d0, d1 and requiring C1 continuity at the interior point::

    w1 = sqrt(d0 / d1)
    wm = (lam * d0 + (1 - lam) * w1 * d1) / s        s = (y1 - y0) / (x1 - x0)
    ym = ((1 - lam) * y0 + lam * w1 * y1) / ((1 - lam) + lam * w1)

Both pieces invert in closed form, so scoring a residual (which needs
the inverse) costs the same as sampling.
"""
from __future__ import annotations

import math

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

MIN_WIDTH = 1e-3
MIN_HEIGHT = 1e-3
MIN_DERIVATIVE = 1e-3
LAMBDA_LO, LAMBDA_SPAN = 0.025, 0.95
# softplus(raw) + MIN_DERIVATIVE == 1 at this raw value
IDENTITY_RAW_DERIVATIVE = math.log(math.expm1(1.0 - MIN_DERIVATIVE))
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class SplineError(Exception):
    pass


class WarmStartDivergence(SplineError):
    pass


def _const(value, shape):
    return Tensor(np.full(shape, value))


def _edges(raw, min_frac, bound):
    k = raw.shape[-1]
    frac = min_frac + (1.0 - min_frac * k) * dc.softmax(raw, axis=-1)
    inner = dc.cumsum(frac, axis=-1)[..., :-1]
    lead = raw.shape[:-1] + (1,)
    return dc.concat([_const(-bound, lead), inner * (2.0 * bound) - bound,
                      _const(bound, lead)], axis=-1)


def knots(raw_w, raw_h, raw_d, raw_l, bound):
    """Map unconstrained parameters to (xk, yk, derivatives, lambdas).

    Boundary derivatives are pinned to 1 so the spline joins the identity
    tails with a continuous derivative.
    """
    xk = _edges(raw_w, MIN_WIDTH, bound)
    yk = _edges(raw_h, MIN_HEIGHT, bound)
    lead = raw_d.shape[:-1] + (1,)
    d = dc.concat([_const(1.0, lead), MIN_DERIVATIVE + dc.softplus(raw_d),
                   _const(1.0, lead)], axis=-1)
    lam = LAMBDA_LO + LAMBDA_SPAN * dc.sigmoid(raw_l)
    return xk, yk, d, lam


def _search(v, edges):
    # bin index from interior knots, values assumed within the bound
    return (v[..., None] >= edges[..., 1:-1]).sum(axis=-1)


def _bin(xk, yk, d, lam, k):
    idx = k[..., None]

    def pick(t, off=0):
        return dc.reshape(dc.take_along_axis(t, idx + off, axis=-1), k.shape)

    x0, x1 = pick(xk), pick(xk, 1)
    y0, y1 = pick(yk), pick(yk, 1)
    d0, d1 = pick(d), pick(d, 1)
    lm = pick(lam)
    dx = x1 - x0
    s = (y1 - y0) / dx
    w1 = dc.sqrt(d0 / d1)
    wm = (lm * d0 + (1.0 - lm) * w1 * d1) / s
    ym = ((1.0 - lm) * y0 + lm * w1 * y1) / ((1.0 - lm) + lm * w1)
    return x0, dx, y0, y1, lm, w1, wm, ym


def _slope(phi, left, y0, y1, lm, w1, wm, ym, dx):
    """dy/dx of the spline at bin fraction ``phi``."""
    phi_l = dc.where(left, phi, 0.0)
    phi_r = dc.where(left, 1.0, phi)
    den_l = (lm - phi_l) + wm * phi_l
    den_r = wm * (1.0 - phi_r) + w1 * (phi_r - lm)
    g_l = lm * wm * (ym - y0) / (den_l * den_l)
    g_r = (1.0 - lm) * wm * w1 * (y1 - ym) / (den_r * den_r)
    return dc.where(left, g_l, g_r) / dx


def spline_forward(x, params, bound):
    """Return (y, log dy/dx) elementwise; ``params`` broadcast to x.shape + (K,)."""
    x = dc.as_tensor(x)
    xk, yk, d, lam = params
    inside = (x.data >= -bound) & (x.data <= bound)
    xs = dc.where(inside, x, 0.0)
    k = _search(xs.data, xk.data)
    x0, dx, y0, y1, lm, w1, wm, ym = _bin(xk, yk, d, lam, k)
    phi = (xs - x0) / dx
    left = phi.data <= lm.data
    phi_l = dc.where(left, phi, 0.0)
    phi_r = dc.where(left, 1.0, phi)
    y_l = (y0 * (lm - phi_l) + wm * ym * phi_l) / ((lm - phi_l) + wm * phi_l)
    y_r = (wm * ym * (1.0 - phi_r) + w1 * y1 * (phi_r - lm)) / (
        wm * (1.0 - phi_r) + w1 * (phi_r - lm))
    y = dc.where(left, y_l, y_r)
    logdet = dc.log(_slope(phi, left, y0, y1, lm, w1, wm, ym, dx))
    return dc.where(inside, y, x), dc.where(inside, logdet, 0.0)


def spline_inverse(y, params, bound):
    """Return (x, log dx/dy) elementwise."""
    y = dc.as_tensor(y)
    xk, yk, d, lam = params
    inside = (y.data >= -bound) & (y.data <= bound)
    ys = dc.where(inside, y, 0.0)
    k = _search(ys.data, yk.data)
    x0, dx, y0, y1, lm, w1, wm, ym = _bin(xk, yk, d, lam, k)
    left = ys.data <= ym.data
    y_l = dc.where(left, ys, ym)
    y_r = dc.where(left, ym, ys)
    phi_l = lm * (y_l - y0) / ((y_l - y0) + wm * (ym - y_l))
    phi_r = (wm * (ym - y_r) + w1 * lm * (y_r - y1)) / (
        wm * (ym - y_r) + w1 * (y_r - y1))
    phi = dc.where(left, phi_l, phi_r)
    x = x0 + phi * dx
    logdet = -dc.log(_slope(phi, left, y0, y1, lm, w1, wm, ym, dx))
    return dc.where(inside, x, y), dc.where(inside, logdet, 0.0)


def _identity_raw(shape, bins):
    return (np.zeros(shape + (bins,)), np.zeros(shape + (bins,)),
            np.full(shape + (bins - 1,), IDENTITY_RAW_DERIVATIVE),
            np.zeros(shape + (bins,)))


def _validate(params):
    xk, yk, d, lam = (np.asarray(p.data) for p in params)
    assert np.all(np.diff(xk, axis=-1) > 0), "spline knots not increasing in x"
    assert np.all(np.diff(yk, axis=-1) > 0), "spline knots not increasing in y"
    assert np.all(d > 0), "spline derivatives not positive"
    assert np.all((lam > 0) & (lam < 1)), "spline interior weights out of range"


class LinearRationalSpline:
    """A single monotone spline on [-bound, bound], identity outside."""

    def __init__(self, raw_w=None, raw_h=None, raw_d=None, raw_l=None, bins=8, bound=5.0):
        defaults = _identity_raw((), bins)
        raws = [defaults[i] if r is None else np.asarray(r, dtype=float)
                for i, r in enumerate((raw_w, raw_h, raw_d, raw_l))]
        if raws[0].shape != (bins,) or raws[2].shape != (bins - 1,):
            raise SplineError("raw parameter shapes do not match the bin count")
        self.bins = bins
        self.bound = float(bound)
        self.raw = [Tensor(r) for r in raws]
        with dc.no_grad():
            _validate(knots(*self.raw, self.bound))

    @classmethod
    def random(cls, rng, bins=8, bound=5.0, scale=1.0):
        return cls(rng.normal(0, scale, bins), rng.normal(0, scale, bins),
                   rng.normal(0, scale, bins - 1), rng.normal(0, scale, bins),
                   bins=bins, bound=bound)

    def _params(self, n):
        sel = np.zeros(n, dtype=int)
        return [p.reshape(1, -1)[sel] for p in knots(*self.raw, self.bound)]

    def _run(self, fn, v):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        flat = v.reshape(-1)
        with dc.no_grad():
            out, ld = fn(Tensor(flat), self._params(flat.size), self.bound)
        return out.data.reshape(v.shape), ld.data.reshape(v.shape)

    def forward(self, x):
        return self._run(spline_forward, x)[0]

    def inverse(self, y):
        return self._run(spline_inverse, y)[0]

    def log_abs_det_forward(self, x):
        return self._run(spline_forward, x)[1]

    def log_abs_det_inverse(self, y):
        return self._run(spline_inverse, y)[1]


class FlowBank:
    """One spline per (regime, component); regimes select which spline scores a row."""

    def __init__(self, n, num_regimes=1, bins=8, bound=5.0):
        self.n = n
        self.num_regimes = num_regimes
        self.bins = bins
        self.bound = float(bound)
        raws = _identity_raw((num_regimes, n), bins)
        names = ("flow.raw_w", "flow.raw_h", "flow.raw_d", "flow.raw_l")
        self.raw = [dc.parameter(r, name=nm) for r, nm in zip(raws, names)]

    def parameters(self):
        return list(self.raw)

    def _per_row(self, u):
        u = np.asarray(u, dtype=int)
        if u.size and (u.min() < 0 or u.max() >= self.num_regimes):
            raise SplineError(f"regime index out of range [0, {self.num_regimes})")
        return [p[u] for p in knots(*self.raw, self.bound)]

    def inverse(self, y, u):
        """Residuals (B, n) -> base normal values and log|d s^-1 / d y|."""
        return spline_inverse(y, self._per_row(u), self.bound)

    def forward(self, x, u):
        return spline_forward(x, self._per_row(u), self.bound)

    def noise_logp(self, eps, u):
        """Per-row log density of residuals ``eps`` (B, n) under regimes ``u``."""
        base, logdet = self.inverse(eps, u)
        return (-0.5 * base * base - _LOG_SQRT_2PI + logdet).sum(axis=-1)

    def spline(self, i, u):
        return LinearRationalSpline(*(p.data[u, i] for p in self.raw),
                                    bins=self.bins, bound=self.bound)

    def check_monotone(self, grid_points=10001):
        """True when every spline is strictly increasing on a dense grid."""
        if not all(np.all(np.isfinite(p.data)) for p in self.raw):
            return False
        grid = np.linspace(-self.bound, self.bound, grid_points)
        with dc.no_grad():
            try:
                _validate(knots(*self.raw, self.bound))
            except (AssertionError, dc.DiffError):
                return False
            for u in range(self.num_regimes):
                rows = np.broadcast_to(grid[:, None], (grid_points, self.n))
                y, _ = self.forward(Tensor(rows), np.full(grid_points, u))
                if not np.all(np.diff(y.data, axis=0) > 0):
                    return False
        return True

    def state(self):
        return {p.name: p.data for p in self.raw}

    def load_state(self, state):
        for p in self.raw:
            p.data[...] = state[p.name]


TARGET_ENTROPY = {
    "gaussian": 0.5 * (1.0 + math.log(2 * math.pi)),
    "laplace": 1.0 + math.log(2.0),
}


def sample_target(rng, target, size):
    if target == "gaussian":
        return rng.standard_normal(size)
    if target == "laplace":
        return rng.laplace(0.0, 1.0, size)
    raise SplineError(f"unknown warm-start target {target!r}")


def warm_start(bank, target="gaussian", steps=5000, lr=1e-3, seed=0, batch=512):
    """Fit every spline in ``bank`` to samples of a standard target density.

    Returns the per-step negative log-likelihood in nats per dimension.
    """
    if target not in TARGET_ENTROPY:
        raise SplineError(f"unknown warm-start target {target!r}")
    rng = np.random.default_rng(seed)
    opt = dc.AdamW(bank.parameters(), lr=lr, weight_decay=0.0)
    history = []
    for _ in range(steps):
        u = rng.integers(bank.num_regimes, size=batch)
        eps = Tensor(sample_target(rng, target, (batch, bank.n)))
        nll = -bank.noise_logp(eps, u).mean() * (1.0 / bank.n)
        dc.backward(nll)
        opt.step()
        history.append(nll.item())
        if history[-1] > 10.0 * max(history[0], 1e-3):
            raise WarmStartDivergence(
                f"NLL rose from {history[0]:.4f} to {history[-1]:.4f} "
                f"after {len(history)} steps (lr={lr})")
    return history


def average_nll(bank, target, samples=200_000, seed=1):
    """Monte Carlo NLL per dimension of ``bank`` on fresh target samples."""
    rng = np.random.default_rng(seed)
    rows = samples // bank.n + 1
    u = rng.integers(bank.num_regimes, size=rows)
    eps = sample_target(rng, target, (rows, bank.n))
    with dc.no_grad():
        lp = bank.noise_logp(Tensor(eps), u).data
    return float(-lp.mean() / bank.n)
