"""Encoder, decoder and the bidirectional recurrent posterior."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

LOG_SIGMA_MIN = -8.0
LOG_SIGMA_MAX = 5.0


class NetError(Exception):
    pass


class Module:
    """Holds named parameters and child modules in registration order."""

    def __init__(self, name):
        self.name = name
        self._params = []
        self._children = []

    def param(self, suffix, data):
        p = dc.parameter(np.asarray(data, dtype=np.float64), name=f"{self.name}.{suffix}")
        self._params.append(p)
        return p

    def child(self, module):
        self._children.append(module)
        return module

    def parameters(self):
        out = list(self._params)
        for c in self._children:
            out.extend(c.parameters())
        return out

    def state(self):
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state(self, state):
        for p in self.parameters():
            if p.name not in state:
                raise NetError(f"missing parameter {p.name}")
            if state[p.name].shape != p.data.shape:
                raise NetError(f"shape mismatch for {p.name}")
            p.data[...] = state[p.name]


def kaiming_uniform(rng, fan_in, shape, slope=dc.LEAKY_SLOPE):
    bound = math.sqrt(6.0 / ((1.0 + slope * slope) * fan_in))
    return rng.uniform(-bound, bound, shape)


def orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


class Dense(Module):
    def __init__(self, rng, fan_in, fan_out, name, scale=1.0):
        super().__init__(name)
        self.w = self.param("w", scale * kaiming_uniform(rng, fan_in, (fan_in, fan_out)))
        self.b = self.param("b", np.zeros(fan_out))

    def __call__(self, x):
        return dc.linear(x, self.w, self.b)


class Mlp(Module):
    """LeakyReLU MLP over the last axis; the output layer is linear."""

    def __init__(self, rng, widths, name, out_scale=1.0):
        super().__init__(name)
        self.widths = tuple(widths)
        last = len(widths) - 2
        self.layers = [self.child(Dense(rng, a, b, f"{name}.{k}",
                                        scale=out_scale if k == last else 1.0))
                       for k, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]

    def __call__(self, x):
        x = dc.as_tensor(x)
        if x.shape[-1] != self.widths[0]:
            raise NetError(f"{self.name}: input width {x.shape[-1]} != {self.widths[0]}")
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < len(self.layers) - 1:
                x = dc.leaky_relu(x)
        return x


class MlpEncoder(Mlp):
    def __init__(self, rng, i_dim, z_dim, hidden=128, name="encoder"):
        super().__init__(rng, (i_dim, hidden, hidden, hidden, z_dim), name)


class MlpDecoder(Mlp):
    def __init__(self, rng, z_dim, i_dim, hidden=128, name="decoder"):
        super().__init__(rng, (z_dim, hidden, hidden, i_dim), name)


class GruCell(Module):
    """Gated recurrent unit with reset, update and candidate blocks.

    ``h' = (1 - z) * n + z * h`` where ``z`` is the update gate and ``n``
    the tanh candidate computed from the reset-gated hidden state.
    """

    def __init__(self, rng, in_dim, hidden, name):
        super().__init__(name)
        self.hidden = hidden
        bound = 1.0 / math.sqrt(hidden)
        self.w_in = self.param("w_in", rng.uniform(-bound, bound, (in_dim, 3 * hidden)))
        self.w_h = self.param("w_h", np.concatenate([orthogonal(rng, hidden) for _ in range(3)],
                                                    axis=1))
        self.b_in = self.param("b_in", np.zeros(3 * hidden))
        self.b_h = self.param("b_h", np.zeros(3 * hidden))

    def gates(self, x, h):
        H = self.hidden
        gi = dc.linear(x, self.w_in, self.b_in)
        gh = dc.linear(h, self.w_h, self.b_h)
        reset = dc.sigmoid(gi[..., :H] + gh[..., :H])
        update = dc.sigmoid(gi[..., H:2 * H] + gh[..., H:2 * H])
        cand = dc.tanh(gi[..., 2 * H:] + reset * gh[..., 2 * H:])
        return update, cand

    def __call__(self, x, h, update=None):
        gate, cand = self.gates(x, h)
        if update is not None:
            gate = dc.as_tensor(np.full(gate.shape, float(update)))
        return (1.0 - gate) * cand + gate * h


@dataclass
class Posterior:
    mu: Tensor          # (B, T, n)
    log_sigma: Tensor   # (B, T, n)
    z: Tensor           # (B, T, n)
    log_q: Tensor       # (B,)

    @property
    def sigma(self):
        return np.exp(self.log_sigma.data)


def reparameterize(mu, log_sigma, eta):
    return mu + dc.exp(log_sigma) * eta


class BiRnnInference(Module):
    """Bidirectional GRU posterior with lag-aware corrections after the first L steps."""

    def __init__(self, rng, z_dim, lag, td_hidden=128, name="infer"):
        super().__init__(name)
        self.z_dim = z_dim
        self.lag = lag
        self.fwd = self.child(GruCell(rng, z_dim, z_dim, f"{name}.fwd"))
        self.bwd = self.child(GruCell(rng, z_dim, z_dim, f"{name}.bwd"))
        self.bottleneck = self.child(Dense(rng, 2 * z_dim, 2 * z_dim, f"{name}.bottleneck"))
        # corrections start at zero so the posterior begins embedding-only
        self.dynamics = self.child(Mlp(rng, (lag * z_dim + 2 * z_dim, td_hidden, 2 * z_dim),
                                       f"{name}.dynamics", out_scale=0.0))

    def _hidden_states(self, emb):
        B, T, n = emb.shape
        h = Tensor(np.zeros((B, n)))
        fwd = []
        for t in range(T):
            h = self.fwd(emb[:, t], h)
            fwd.append(h)
        h = Tensor(np.zeros((B, n)))
        bwd = [None] * T
        for t in reversed(range(T)):
            h = self.bwd(emb[:, t], h)
            bwd[t] = h
        return [dc.concat([f, b], axis=-1) for f, b in zip(fwd, bwd)]

    def __call__(self, emb, rng=None, sample=True):
        """Posterior for embeddings (B, T, n); ``sample=False`` returns the mean path."""
        emb = dc.as_tensor(emb)
        if emb.ndim != 3 or emb.shape[-1] != self.z_dim:
            raise NetError(f"embeddings must be (B, T, {self.z_dim}), got {emb.shape}")
        B, T, n = emb.shape
        if T < self.lag + 1:
            raise NetError(f"sequence length {T} < L + 1 = {self.lag + 1}")
        if sample and rng is None:
            raise NetError("sampling needs an rng")
        states = self._hidden_states(emb)
        mus, logs, zs, logq = [], [], [], None
        for t in range(T):
            base = self.bottleneck(states[t])
            if t >= self.lag:
                lags = dc.concat([zs[t - k] for k in range(1, self.lag + 1)] + [states[t]],
                                 axis=-1)
                base = base + self.dynamics(lags)
            mu = base[:, :n]
            log_sigma = dc.clip(base[:, n:], LOG_SIGMA_MIN, LOG_SIGMA_MAX)
            if sample:
                eta = rng.standard_normal((B, n))
                z = reparameterize(mu, log_sigma, eta)
                term = (-0.5 * eta * eta - 0.5 * math.log(2 * math.pi) - log_sigma).sum(axis=-1)
            else:
                z = mu
                term = (-0.5 * math.log(2 * math.pi) - log_sigma).sum(axis=-1)
            logq = term if logq is None else logq + term
            mus.append(mu)
            logs.append(log_sigma)
            zs.append(z)
        post = Posterior(dc.stack(mus, axis=1), dc.stack(logs, axis=1), dc.stack(zs, axis=1),
                         logq)
        if not np.all(np.isfinite(post.sigma)):
            raise NetError("non-finite posterior scale")
        return post


def log_normal_density(z, mu, sigma):
    """Numpy reference: sum of log N(z; mu, sigma^2) over all entries."""
    z, mu, sigma = (np.asarray(a, dtype=float) for a in (z, mu, sigma))
    return float(np.sum(-0.5 * ((z - mu) / sigma) ** 2 - np.log(sigma)
                        - 0.5 * math.log(2 * math.pi)))
