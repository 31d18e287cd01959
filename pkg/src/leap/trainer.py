"""Joint optimization of the sequential VAE, transition prior, noise flows and discriminator."""
from __future__ import annotations

import copy
import csv
import io
import json
import math
import struct
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import diffcore as dc
from . import evaluate as ev
from .datagen import NpProcessSpec
from .discriminator import NoiseDiscriminator, disc_loss, permute_negatives, tc_loss
from .nets import BiRnnInference, MlpDecoder, MlpEncoder
from .prior import make_transition, standard_normal_logp, transition_logp
from .splineflow import FlowBank, warm_start

DEFAULT_WEIGHTS = {"var": (3e-3, 9e-3, 1e-6), "np": (2e-3, 2e-2, 1e-6)}
NOISE_TARGET = {"var": "laplace", "np": "gaussian"}
LADDER = (("baseline", False, False, False), ("+prior", True, False, False),
          ("+flow", True, True, False), ("+disc", True, True, True))
METRIC_FIELDS = ("epoch", "elbo", "recon", "kld", "mask", "tc", "val_elbo", "val_mcc")

# named random sub-streams
_INIT, _TRAIN, _EVAL, _WARM = 1, 2, 3, 4

CKPT_MAGIC = b"LEAPCKPT"
CKPT_VERSION = 1
_LOG_2PI = math.log(2 * math.pi)


class TrainError(Exception):
    pass


class ConfigError(TrainError):
    pass


class NumericalError(TrainError):
    pass


class CheckpointError(TrainError):
    pass


def substream(seed, key):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


@dataclass
class TrainConfig:
    transition: str | None = None
    beta: float | None = None
    gamma: float | None = None
    sigma: float | None = None
    lr: float = 0.002
    batch: int = 32
    max_epochs: int = 200
    patience: int = 5
    disc_lr: float = 0.001
    z_dim: int | None = None
    lag: int | None = None
    bins: int = 8
    bound: float = 5.0
    warm_target: str | None = None
    warm_steps: int = 5000
    warm_lr: float = 0.001
    seed: int = 0
    prior: bool = True
    flow: bool = True
    disc: bool = True
    weight_decay: float = 1e-4
    hidden: int = 128
    prior_hidden: int = 64
    disc_hidden: int = 512
    val_windows: int = 2048
    steps_per_epoch: int | None = None
    train_windows: int | None = None

    @classmethod
    def from_json(cls, obj):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**obj)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self):
        return asdict(self)

    def resolved(self, dataset=None):
        """Copy with every unset field filled from the dataset and per-kind defaults."""
        cfg = copy.copy(self)
        if cfg.transition is None:
            if dataset is None:
                raise ConfigError("transition kind unset and no dataset to infer it from")
            cfg.transition = "np" if isinstance(dataset.spec, NpProcessSpec) else "var"
        if cfg.transition not in DEFAULT_WEIGHTS:
            raise ConfigError(f"unknown transition {cfg.transition!r}")
        beta, gamma, sigma = DEFAULT_WEIGHTS[cfg.transition]
        cfg.beta = beta if cfg.beta is None else cfg.beta
        cfg.gamma = gamma if cfg.gamma is None else cfg.gamma
        cfg.sigma = sigma if cfg.sigma is None else cfg.sigma
        if cfg.warm_target is None:
            cfg.warm_target = NOISE_TARGET[cfg.transition]
        if dataset is not None:
            cfg.z_dim = dataset.n if cfg.z_dim is None else cfg.z_dim
            cfg.lag = dataset.L if cfg.lag is None else cfg.lag
        cfg.validate()
        return cfg

    def validate(self):
        for name in ("beta", "gamma", "sigma", "weight_decay"):
            value = getattr(self, name)
            if value is None or value < 0:
                raise ConfigError(f"{name} must be a nonnegative number")
        if self.batch < 2:
            raise ConfigError("batch must be at least 2")
        if self.z_dim is None or self.z_dim < 1 or self.lag is None or self.lag < 1:
            raise ConfigError("z_dim and lag must be positive")
        if (self.flow or self.disc) and not self.prior:
            raise ConfigError("flow and disc terms need the transition prior")
        if self.lr < 0 or self.disc_lr < 0 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("invalid optimization settings")


class LeapModel:
    """All learnable parts: encoder, posterior, decoder, transition, flows, discriminator."""

    def __init__(self, cfg, obs_dim, num_regimes, window_len):
        rng = substream(cfg.seed, _INIT)
        n = cfg.z_dim
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.window_len = window_len
        self.encoder = MlpEncoder(rng, obs_dim, n, cfg.hidden)
        self.inference = BiRnnInference(rng, n, cfg.lag, cfg.hidden)
        self.decoder = MlpDecoder(rng, n, obs_dim, cfg.hidden)
        self.transition = make_transition(cfg.transition, rng, n, cfg.lag, cfg.prior_hidden)
        self.flows = FlowBank(n, num_regimes, cfg.bins, cfg.bound)
        self.disc = NoiseDiscriminator(rng, n * (window_len - cfg.lag), cfg.disc_hidden)
        names = [p.name for p in self.all_parameters()]
        if len(set(names)) != len(names):
            raise TrainError("duplicate parameter names")

    def vae_parameters(self):
        params = (self.encoder.parameters() + self.inference.parameters()
                  + self.decoder.parameters())
        if self.cfg.prior:
            params += self.transition.parameters()
        if self.cfg.flow:
            params += self.flows.parameters()
        return params

    def disc_parameters(self):
        return self.disc.parameters()

    def all_parameters(self):
        return (self.encoder.parameters() + self.inference.parameters()
                + self.decoder.parameters() + self.transition.parameters()
                + self.flows.parameters() + self.disc.parameters())

    def state(self):
        return {p.name: p.data.copy() for p in self.all_parameters()}

    def load_state(self, state):
        for p in self.all_parameters():
            if p.name not in state:
                raise CheckpointError(f"checkpoint lacks {p.name}")
            if state[p.name].shape != p.data.shape:
                raise CheckpointError(f"shape mismatch for {p.name}: "
                                      f"{state[p.name].shape} vs {p.data.shape}")
            p.data[...] = state[p.name]

    def encode(self, x, batch=1024):
        """Posterior means (N, T, n) along the deterministic path."""
        x = np.asarray(x, dtype=float)
        out = []
        with dc.no_grad():
            for s in range(0, len(x), batch):
                emb = self.encoder(x[s:s + batch])
                out.append(self.inference(emb, sample=False).mu.data)
        return np.concatenate(out) if out else np.zeros((0,) + x.shape[1:2] + (self.cfg.z_dim,))


# -- objective ------------------------------------------------------------
def gaussian_loglik(x, x_hat):
    """Per-window unit-variance Gaussian log-likelihood, constants included."""
    diff = x_hat - x
    B = diff.shape[0]
    return (-0.5 * diff * diff - 0.5 * _LOG_2PI).reshape(B, -1).sum(axis=-1)


def log_prior(model, z, u):
    """Per-window ``log p(z)`` and the residuals (B, n*W) when a transition prior is used."""
    cfg = model.cfg
    B, T, n = z.shape
    L = cfg.lag
    if not cfg.prior:
        return standard_normal_logp(z.reshape(B, T * n)), None
    total = standard_normal_logp(z[:, :L].reshape(B, L * n))
    residuals = []
    flows = model.flows if cfg.flow else None
    base = NOISE_TARGET[cfg.transition]
    for t in range(L, T):
        logp, eps = transition_logp(z[:, t - L:t + 1], u, model.transition, flows, base,
                                    return_residuals=True)
        total = total + logp
        residuals.append(eps)
    return total, dc.concat(residuals, axis=-1) if len(residuals) > 1 else residuals[0]


def elbo(x, u, model, rng, sample=True):
    """Negated augmented ELBO (to minimize) with its components and residuals.

    ``total = -recon + beta * kld + gamma * mask + sigma * tc`` where recon
    and kld are batch means of per-window quantities.
    """
    cfg = model.cfg
    emb = model.encoder(x)
    post = model.inference(emb, rng, sample=sample)
    x_hat = model.decoder(post.z)
    recon = gaussian_loglik(x, x_hat).mean()
    logp, residuals = log_prior(model, post.z, u)
    kld = (post.log_q - logp).mean()
    total = -recon + cfg.beta * kld
    comps = {"recon": recon.item(), "kld": kld.item(), "mask": 0.0, "tc": 0.0}
    if cfg.prior and cfg.gamma:
        mask = model.transition.mask_penalty()
        total = total + cfg.gamma * mask
        comps["mask"] = mask.item()
    if cfg.disc and residuals is not None:
        tc = tc_loss(model.disc, residuals)
        total = total + cfg.sigma * tc
        comps["tc"] = tc.item()
    comps["total"] = total.item()
    bad = [k for k, v in comps.items() if not math.isfinite(v)]
    if bad:
        raise NumericalError(f"non-finite loss components {bad}: {comps}")
    return total, comps, residuals


def laplacian_logpdf(eps, alpha=1.0, lam=1.0):
    """Log density of ``p(e) = alpha * lam**(1/alpha) / (2 Gamma(1/alpha)) exp(-lam |e|**alpha)``."""
    if not (alpha > 0 and lam > 0):
        raise ValueError("alpha and lam must be positive")
    eps = np.asarray(eps, dtype=float)
    const = math.log(alpha) + math.log(lam) / alpha - math.log(2.0) - math.lgamma(1.0 / alpha)
    return const - lam * np.abs(eps) ** alpha


# -- early stopping and checkpoints ---------------------------------------
class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a strictly better score."""

    def __init__(self, patience):
        self.patience = patience
        self.best = -math.inf
        self.bad_epochs = 0

    def update(self, score):
        """Record a score (higher is better); returns True when training should stop."""
        if score > self.best:
            self.best = score
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def save_checkpoint(path, arrays, header):
    names = sorted(arrays)
    meta = dict(header)
    meta["arrays"] = [[name, list(np.shape(arrays[name]))] for name in names]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint")
    version, size = struct.unpack("<IQ", raw[8:20])
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(raw[20:20 + size].decode("utf-8"))
    offset = 20 + size
    arrays = {}
    for name, shape in meta.pop("arrays"):
        count = int(np.prod(shape, dtype=int))
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"truncated checkpoint at {name}")
        arrays[name] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise CheckpointError("trailing bytes in checkpoint")
    return meta, arrays


# -- training -------------------------------------------------------------
@dataclass
class RunArtifacts:
    config: TrainConfig
    model: LeapModel
    metrics: list = field(default_factory=list)
    mcc_trajectory: list = field(default_factory=list)
    best_state: dict | None = None
    best_epoch: int = 0
    best_val_elbo: float = -math.inf
    best_val_mcc: float = float("nan")
    stopped_early: bool = False
    out_dir: Path | None = None

    @property
    def final_mcc(self):
        return self.best_val_mcc


class Trainer:
    def __init__(self, dataset, config, out_dir=None, log=None):
        self.dataset = dataset
        self.cfg = config.resolved(dataset)
        cfg = self.cfg
        if dataset.window_len < cfg.lag + 1:
            raise ConfigError(f"windows of length {dataset.window_len} cannot hold "
                              f"{cfg.lag} lags")
        if cfg.z_dim != dataset.n:
            warnings.warn(f"z_dim={cfg.z_dim} differs from true latent dimension "
                          f"{dataset.n}", RuntimeWarning, stacklevel=2)
        self.log = log
        self.out_dir = Path(out_dir) if out_dir is not None else None
        train_idx, val_idx, _ = dataset.split()
        if cfg.train_windows is not None:
            train_idx = train_idx[:cfg.train_windows]
        if len(train_idx) < cfg.batch:
            raise ConfigError("fewer training windows than one batch")
        self.train_idx = np.sort(train_idx)
        self.val_idx = np.sort(val_idx[:cfg.val_windows])
        self.model = LeapModel(cfg, dataset.obs_dim, max(dataset.num_regimes, 1),
                               dataset.window_len)
        self.opt = dc.AdamW(self.model.vae_parameters(), lr=cfg.lr,
                            weight_decay=cfg.weight_decay)
        self.dopt = dc.SGD(self.model.disc_parameters(), lr=cfg.disc_lr) if cfg.disc else None
        self.rng = substream(cfg.seed, _TRAIN)
        self.epoch = 0
        self.step = 0
        self.stopper = EarlyStopping(cfg.patience)
        self.art = RunArtifacts(cfg, self.model, out_dir=self.out_dir)
        self.warmed = False

    def _say(self, msg):
        if self.log is not None:
            print(msg, file=self.log, flush=True)

    def warm_start(self):
        cfg = self.cfg
        if cfg.prior and cfg.flow and cfg.warm_steps > 0:
            seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(_WARM,)).generate_state(1)[0])
            hist = warm_start(self.model.flows, cfg.warm_target, cfg.warm_steps, cfg.warm_lr,
                              seed=seed)
            self._say(f"warm start ({cfg.warm_target}): nll {hist[0]:.4f} -> {hist[-1]:.4f}")
        self.warmed = True

    def _train_step(self, idx):
        ds, model, cfg = self.dataset, self.model, self.cfg
        x = ds.x[idx]
        u = ds.u[idx].astype(int)
        total, comps, residuals = elbo(x, u, model, self.rng)
        dc.backward(total)
        self.opt.step()
        if cfg.prior and hasattr(model.transition, "project"):
            model.transition.project()
        if self.dopt is not None and residuals is not None:
            pos = residuals.data
            neg = permute_negatives(pos, self.rng)
            loss_d = disc_loss(model.disc, pos, neg)
            dc.backward(loss_d)
            self.dopt.step()
            comps["disc"] = loss_d.item()
        self.step += 1
        return comps

    def validate(self, batch=512):
        """Validation ELBO (per window, to maximize) and MCC of posterior means."""
        ds, model = self.dataset, self.model
        rng = substream(self.cfg.seed, _EVAL)
        total, count = 0.0, 0
        with dc.no_grad():
            for s in range(0, len(self.val_idx), batch):
                idx = self.val_idx[s:s + batch]
                _, comps, _ = elbo(ds.x[idx], ds.u[idx].astype(int), model, rng)
                total += -comps["total"] * len(idx)
                count += len(idx)
        z_hat = model.encode(ds.x[self.val_idx])[:, -1]
        score = ev.mcc(z_hat, ds.z[self.val_idx, -1], ds.method).mcc
        return total / count, score

    def run_epoch(self):
        cfg = self.cfg
        order = self.rng.permutation(self.train_idx)
        steps = len(order) // cfg.batch
        if cfg.steps_per_epoch is not None:
            steps = min(steps, cfg.steps_per_epoch)
        sums = {k: 0.0 for k in ("total", "recon", "kld", "mask", "tc")}
        for k in range(steps):
            comps = self._train_step(order[k * cfg.batch:(k + 1) * cfg.batch])
            for key in sums:
                sums[key] += comps[key]
        self.epoch += 1
        means = {k: v / steps for k, v in sums.items()}
        val_elbo, val_mcc = self.validate()
        row = {"epoch": self.epoch, "elbo": -means["total"], "recon": means["recon"],
               "kld": means["kld"], "mask": means["mask"], "tc": means["tc"],
               "val_elbo": val_elbo, "val_mcc": val_mcc}
        self.art.metrics.append(row)
        self.art.mcc_trajectory.append((self.step, val_mcc))
        stop = self.stopper.update(val_elbo)
        if self.stopper.bad_epochs == 0:
            self.art.best_state = self.model.state()
            self.art.best_epoch = self.epoch
            self.art.best_val_elbo = val_elbo
            self.art.best_val_mcc = val_mcc
        self._say(f"epoch {self.epoch:3d} step {self.step:6d} elbo {row['elbo']:.4f} "
                  f"val_elbo {val_elbo:.4f} val_mcc {val_mcc:.4f}")
        return stop

    def fit(self, max_epochs=None):
        """Train until early stopping or ``max_epochs`` (defaults to the config value)."""
        if not self.warmed:
            self.warm_start()
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            _write_json(self.out_dir / "resolved_config.json", self.cfg.to_json())
        limit = self.cfg.max_epochs if max_epochs is None else min(max_epochs,
                                                                    self.cfg.max_epochs)
        while self.epoch < limit:
            stop = self.run_epoch()
            if self.out_dir is not None:
                self.write_outputs()
            if stop:
                self.art.stopped_early = True
                break
        return self.art

    # persistence
    def checkpoint_payload(self):
        arrays = {f"model/{k}": v for k, v in self.model.state().items()}
        opt = self.opt.state_dict()
        for p, m, v in zip(self.opt.params, opt["m"], opt["v"]):
            arrays[f"adam_m/{p.name}"] = m
            arrays[f"adam_v/{p.name}"] = v
        if self.art.best_state is not None:
            arrays.update({f"best/{k}": v for k, v in self.art.best_state.items()})
        header = {
            "config": self.cfg.to_json(), "epoch": self.epoch, "step": self.step,
            "adam_step": opt["step"], "disc_step": self.dopt.step_count if self.dopt else 0,
            "rng": self.rng.bit_generator.state, "best": self.stopper.best,
            "bad_epochs": self.stopper.bad_epochs, "best_epoch": self.art.best_epoch,
            "best_val_elbo": self.art.best_val_elbo, "best_val_mcc": self.art.best_val_mcc,
            "metrics": self.art.metrics, "mcc_trajectory": self.art.mcc_trajectory,
            "warmed": self.warmed,
        }
        return arrays, header

    def save(self, path):
        arrays, header = self.checkpoint_payload()
        save_checkpoint(path, arrays, header)

    def restore(self, path):
        header, arrays = load_checkpoint(path)
        saved = TrainConfig.from_json(header["config"])
        if saved != self.cfg:
            raise CheckpointError("checkpoint was written with a different config")
        self.model.load_state({k[6:]: v for k, v in arrays.items() if k.startswith("model/")})
        self.opt.load_state_dict({
            "step": header["adam_step"], "lr": self.cfg.lr,
            "m": [arrays[f"adam_m/{p.name}"] for p in self.opt.params],
            "v": [arrays[f"adam_v/{p.name}"] for p in self.opt.params]})
        if self.dopt is not None:
            self.dopt.step_count = header["disc_step"]
        self.rng.bit_generator.state = header["rng"]
        self.epoch, self.step = header["epoch"], header["step"]
        self.stopper.best = header["best"]
        self.stopper.bad_epochs = header["bad_epochs"]
        self.art.metrics = header["metrics"]
        self.art.mcc_trajectory = [tuple(x) for x in header["mcc_trajectory"]]
        self.art.best_epoch = header["best_epoch"]
        self.art.best_val_elbo = header["best_val_elbo"]
        self.art.best_val_mcc = header["best_val_mcc"]
        best = {k[5:]: v for k, v in arrays.items() if k.startswith("best/")}
        self.art.best_state = best or None
        self.warmed = header["warmed"]

    def write_outputs(self):
        out = self.out_dir
        self.save(out / "last.ckpt")
        if self.art.best_state is not None and self.art.best_epoch == self.epoch:
            arrays = {f"model/{k}": v for k, v in self.art.best_state.items()}
            save_checkpoint(out / "best.ckpt", arrays,
                            {"config": self.cfg.to_json(), "epoch": self.epoch})
        (out / "metrics.csv").write_text(metrics_csv(self.art.metrics), encoding="utf-8")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("step", "mcc"))
        w.writerows(self.art.mcc_trajectory)
        (out / "mcc_trajectory.csv").write_text(buf.getvalue(), encoding="utf-8")


def metrics_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def train(dataset, config, out_dir=None, resume=False, log=None):
    """Warm-start the flows, then train with early stopping; returns the run artifacts.

    The model is left holding the best-validation-ELBO parameters.
    """
    trainer = Trainer(dataset, config, out_dir, log)
    if resume and out_dir is not None and (Path(out_dir) / "last.ckpt").exists():
        trainer.restore(Path(out_dir) / "last.ckpt")
    art = trainer.fit()
    if art.best_state is not None:
        trainer.model.load_state(art.best_state)
    return art


def load_model(run_dir, dataset, which="best"):
    """Rebuild a trained model from a run directory."""
    run = Path(run_dir)
    cfg = TrainConfig.from_json(json.loads((run / "resolved_config.json").read_text()))
    if cfg.z_dim is not None and dataset.obs_dim < 1:
        raise ConfigError("dataset has no observations")
    header, arrays = load_checkpoint(run / f"{which}.ckpt")
    model = LeapModel(cfg, dataset.obs_dim, max(dataset.num_regimes, 1), dataset.window_len)
    model.load_state({k[6:]: v for k, v in arrays.items() if k.startswith("model/")})
    return model


def ablate(dataset, config, seeds=(0,), out_dir=None, log=None):
    """Train the four-step ladder (baseline, +prior, +flow, +disc) for every seed.

    Returns ``{rung: [RunArtifacts per seed]}`` and a table of mean final MCC.
    """
    runs = {name: [] for name, *_ in LADDER}
    for seed in seeds:
        for name, use_prior, use_flow, use_disc in LADDER:
            cfg = copy.copy(config)
            cfg.seed, cfg.prior, cfg.flow, cfg.disc = seed, use_prior, use_flow, use_disc
            sub = None if out_dir is None else Path(out_dir) / f"{name.strip('+')}-s{seed}"
            if log is not None:
                print(f"== {name} seed {seed}", file=log, flush=True)
            runs[name].append(train(dataset, cfg, sub, log=log))
    table = [{"rung": name, "mcc": float(np.mean([r.final_mcc for r in runs[name]])),
              "per_seed": [r.final_mcc for r in runs[name]]} for name, *_ in LADDER]
    if out_dir is not None:
        _write_json(Path(out_dir) / "ablation.json", table)
    return runs, table

