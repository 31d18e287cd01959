"""Transition priors evaluated by change of variables through inverse transitions.

A window ``(B, L + 1, n)`` is ordered oldest first, so ``window[:, -1]`` is
the current step and ``window[:, L - tau]`` is the step ``tau`` lags back.
"""
from __future__ import annotations

import math

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .nets import kaiming_uniform

DEGENERATE_DERIVATIVE = 1e-12
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class PriorError(Exception):
    pass


class DegenerateTransitionError(PriorError):
    pass


def split_window(window, lag):
    window = dc.as_tensor(window)
    if window.ndim != 3 or window.shape[1] != lag + 1:
        raise PriorError(f"window must be (B, {lag + 1}, n), got {window.shape}")
    return window[:, lag], window[:, lag - 1::-1]          # lags[:, tau - 1] = z(t - tau)


def _lrelu_slope(pre, slope=dc.LEAKY_SLOPE):
    return np.where(pre > 0, 1.0, slope)


class NpInverseTransition:
    """Per-component inverse transitions, strictly increasing in the current value.

    ``r_i(a, lags) = exp(alpha_i) * a + m_i(a, g_i * lags) + h_i(g_i * lags)``
    with ``g_i = sigmoid(gamma_i)``. ``m_i`` has nonnegative weights on every
    path from ``a`` (kept so by ``project``) and ``h_i`` only sees lags, so
    ``dr_i/da >= exp(alpha_i) > 0`` and each ``r_i`` is invertible in ``a``.
    Every component reads only its own current coordinate, hence the
    Jacobian of (lags, z_t) -> (lags, residuals) is block lower triangular.
    """

    kind = "np"

    def __init__(self, rng, n, lag, hidden=64, mask_init=0.0, net_scale=0.1):
        self.n, self.lag, self.hidden = n, lag, hidden
        k = lag * n
        H = hidden
        param = dc.parameter
        self.gamma = param(np.full((n, lag, n), float(mask_init)), "prior.gamma")
        self.alpha = param(np.zeros((n, 1, 1)), "prior.alpha")
        self.m1a = param(np.abs(kaiming_uniform(rng, k + 1, (n, 1, H))), "prior.m1a")
        self.m1l = param(kaiming_uniform(rng, k + 1, (n, k, H)), "prior.m1l")
        self.mb1 = param(np.zeros((n, 1, H)), "prior.mb1")
        self.m2 = param(np.abs(kaiming_uniform(rng, H, (n, H, H))), "prior.m2")
        self.mb2 = param(np.zeros((n, 1, H)), "prior.mb2")
        self.m3 = param(net_scale * np.abs(kaiming_uniform(rng, H, (n, H, 1))), "prior.m3")
        self.h1 = param(kaiming_uniform(rng, k, (n, k, H)), "prior.h1")
        self.hb1 = param(np.zeros((n, 1, H)), "prior.hb1")
        self.h2 = param(kaiming_uniform(rng, H, (n, H, H)), "prior.h2")
        self.hb2 = param(np.zeros((n, 1, H)), "prior.hb2")
        self.h3 = param(net_scale * kaiming_uniform(rng, H, (n, H, 1)), "prior.h3")
        self.b3 = param(np.zeros((n, 1, 1)), "prior.b3")

    def parameters(self):
        return [self.gamma] + self.weights()

    def weights(self):
        return [self.alpha, self.m1a, self.m1l, self.mb1, self.m2, self.mb2, self.m3,
                self.h1, self.hb1, self.h2, self.hb2, self.h3, self.b3]

    def nonnegative(self):
        return [self.m1a, self.m2, self.m3]

    def project(self):
        """Clamp the monotone-path weights back onto the nonnegative orthant."""
        for p in self.nonnegative():
            np.maximum(p.data, 0.0, out=p.data)

    def mask(self):
        return 1.0 / (1.0 + np.exp(-self.gamma.data))

    def residuals_and_logdet(self, window):
        """Residuals (B, n) and per-row log|det| (B,) for windows (B, L+1, n)."""
        current, lags = split_window(window, self.lag)
        B = current.shape[0]
        n, L = self.n, self.lag
        a = current.T.reshape(n, B, 1)
        gate = dc.sigmoid(self.gamma).reshape(n, 1, L * n)
        gated = lags.reshape(1, B, L * n) * gate                               # (n, B, k)

        pre1 = a * self.m1a + dc.matmul(gated, self.m1l) + self.mb1
        s1 = _lrelu_slope(pre1.data)
        pre2 = dc.matmul(pre1 * s1, self.m2) + self.mb2
        s2 = _lrelu_slope(pre2.data)
        mono = dc.matmul(pre2 * s2, self.m3)

        q1 = dc.matmul(gated, self.h1) + self.hb1
        q2 = dc.matmul(dc.leaky_relu(q1), self.h2) + self.hb2
        shift = dc.matmul(dc.leaky_relu(q2), self.h3)

        scale = dc.exp(self.alpha)
        out = scale * a + mono + shift + self.b3                               # (n, B, 1)
        # forward-mode derivative of r_i with respect to a
        d1 = self.m1a * s1
        d2 = dc.matmul(d1, self.m2) * s2
        deriv = scale + dc.matmul(d2, self.m3)                                 # (n, B, 1)
        if np.any(np.abs(deriv.data) < DEGENERATE_DERIVATIVE):
            raise DegenerateTransitionError("inverse transition derivative vanished")
        eps = out.reshape(n, B).T
        logdet = dc.log(dc.tabs(deriv.reshape(n, B))).sum(axis=0)
        return eps, logdet

    def mask_penalty(self):
        return dc.sigmoid(self.gamma).sum()


class VarInverseTransition:
    """Linear residuals ``eps = z_t - sum_tau r_tau z(t - tau)``."""

    kind = "var"

    def __init__(self, n, lag):
        self.n, self.lag = n, lag
        self.r = dc.parameter(np.zeros((lag, n, n)), "prior.r")

    def parameters(self):
        return [self.r]

    def weights(self):
        return [self.r]

    def matrices(self):
        return self.r.data.copy()

    def residuals(self, window):
        current, lags = split_window(window, self.lag)
        B = current.shape[0]
        flat = lags.reshape(B, self.lag * self.n)
        stacked = self.r.transpose(0, 2, 1).reshape(self.lag * self.n, self.n)
        return current - dc.matmul(flat, stacked)

    def residuals_and_logdet(self, window):
        eps = self.residuals(window)
        return eps, None

    def mask_penalty(self):
        return dc.tabs(self.r).sum()


def standard_normal_logp(eps):
    return (-0.5 * eps * eps - _LOG_SQRT_2PI).sum(axis=-1)


def standard_laplace_logp(eps):
    return (-dc.tabs(eps) - math.log(2.0)).sum(axis=-1)


def transition_logp(window, u, transition, flows=None, base="gaussian",
                    return_residuals=False):
    """Per-window ``log p(z_t | lags, u)`` of shape (B,).

    ``flows`` scores residuals with the regime's spline noise model; when
    it is ``None`` the residuals are scored by a fixed standard ``base``
    density (``"gaussian"`` or ``"laplace"``). With ``return_residuals``
    the residual tensor (B, n) is returned as well.
    """
    eps, logdet = transition.residuals_and_logdet(window)
    if flows is not None:
        logp = flows.noise_logp(eps, u)
    elif base == "gaussian":
        logp = standard_normal_logp(eps)
    elif base == "laplace":
        logp = standard_laplace_logp(eps)
    else:
        raise PriorError(f"unknown base density {base!r}")
    if logdet is not None:
        logp = logp + logdet
    return (logp, eps) if return_residuals else logp


def mask_penalty(transition):
    return transition.mask_penalty()


def make_transition(kind, rng, n, lag, hidden=64):
    if kind == "np":
        return NpInverseTransition(rng, n, lag, hidden)
    if kind == "var":
        return VarInverseTransition(n, lag)
    raise PriorError(f"unknown transition kind {kind!r}")


def brute_force_logdet(transition, window):
    """log|det| of the full (L+1)n map by central differences, numpy only."""
    window = np.asarray(window, dtype=float)
    L1, n = window.shape

    def full_map(flat):
        w = flat.reshape(1, L1, n)
        with dc.no_grad():
            eps, _ = transition.residuals_and_logdet(Tensor(w))
        return np.concatenate([w[0, :-1].ravel(), eps.data[0]])

    x0 = window.ravel()
    h = 1e-6
    jac = np.empty((x0.size, x0.size))
    for k in range(x0.size):
        step = np.zeros_like(x0)
        step[k] = h
        jac[:, k] = (full_map(x0 + step) - full_map(x0 - step)) / (2 * h)
    return float(np.linalg.slogdet(jac)[1])
