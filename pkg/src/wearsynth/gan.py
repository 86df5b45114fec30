"""Conditional time-series GANs for 60x6 windows.

Three generator families share one artifact format:

* ``cgan``     recurrent conditional GAN with a batch-diversity regularizer;
* ``dgan``     DoppelGANger-style model with separate label, min/max and
               measurement generators plus an auxiliary metadata discriminator;
* ``dp_cgan``  the CGAN whose discriminator is trained with clipped, noised
               per-example gradients (the generator never sees real data).
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import dp
from .preprocess import N_CHANNELS, WINDOW_S, WindowSet

log = logging.getLogger(__name__)

KINDS = ("cgan", "dgan", "dp_cgan")

SUBJECT_WINDOWS = 36
SUBJECT_STRESS_WINDOWS = 11
SYNTHETIC_ID_BASE = 10_000


class GanError(Exception):
    pass


class ConditioningError(GanError, ValueError):
    pass


class TrainingFailure(GanError):
    def __init__(self, msg, last_finite_epoch):
        super().__init__(f"{msg} (last finite epoch: {last_finite_epoch})")
        self.last_finite_epoch = last_finite_epoch


_DEFAULTS = {
    "cgan": dict(learning_rate=2e-4, batch_size=64, epochs=1600, diversity_lambda=8.0),
    "dgan": dict(learning_rate=1e-3, batch_size=None, epochs=10_000, diversity_lambda=0.0),
    "dp_cgan": dict(learning_rate=1e-3, batch_size=8, epochs=420, diversity_lambda=8.0),
}


@dataclass
class GanConfig:
    kind: str
    noise_dim: int = 16
    diversity_lambda: float = 8.0
    diversity_cap: float = 0.1       # no reward beyond this output/noise distance ratio
    moment_weight: float = 0.0       # cgan only: match batch mean/std per step and channel
    learning_rate: float = 2e-4
    batch_size: int | None = 64      # None: whole training set per step
    epochs: int = 1600
    privacy: dp.PrivacySpec | None = None
    seed: int = 42
    hidden: int = 128
    label_dim: int = 8
    sliding_duplication: bool = True  # DP accounting for 30 s-stride pools

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GanError(f"unknown GAN kind {self.kind!r}")
        if (self.kind == "dp_cgan") != (self.privacy is not None):
            raise GanError("privacy settings are required for dp_cgan and only for dp_cgan")
        if self.moment_weight and self.kind != "cgan":
            raise GanError("moment matching reads real windows in the generator step; cgan only")

    @classmethod
    def defaults(cls, kind: str, **overrides) -> "GanConfig":
        if kind not in _DEFAULTS:
            raise GanError(f"unknown GAN kind {kind!r}")
        if kind == "dp_cgan" and "privacy" not in overrides:
            overrides["privacy"] = dp.PrivacySpec(epsilon_target=10.0)
        return cls(kind=kind, **{**_DEFAULTS[kind], **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["privacy"] = asdict(self.privacy) if self.privacy else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        d = dict(d)
        if d.get("privacy"):
            d["privacy"] = dp.PrivacySpec(**d["privacy"])
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# ---------------------------------------------------------------------------
# networks


class RecurrentGenerator(nn.Module):
    """Per-step noise plus a label embedding through two LSTM layers,
    squashed into [0, 1].

    The first step's noise vector is also broadcast to every step as a
    window-level latent, so whole-window properties (level, phase) do not
    have to be integrated out of per-step noise.
    """

    def __init__(self, noise_dim, hidden, label_dim=8, cond_dim=0, out_dim=N_CHANNELS):
        super().__init__()
        self.noise_dim = noise_dim
        self.embed = nn.Embedding(2, label_dim)
        self.rnn = nn.LSTM(2 * noise_dim + label_dim + cond_dim, hidden, num_layers=2, batch_first=True)
        self.out = nn.Linear(hidden, out_dim)

    def forward(self, z, labels, cond=None):
        steps = z.shape[1]
        e = self.embed(labels)[:, None, :].expand(-1, steps, -1)
        parts = [z, z[:, :1, :].expand(-1, steps, -1), e]
        if cond is not None:
            parts.append(cond[:, None, :].expand(-1, steps, -1))
        h, _ = self.rnn(torch.cat(parts, dim=-1))
        return torch.sigmoid(self.out(h))


class RecurrentDiscriminator(nn.Module):
    """Two stacked LSTM layers over the window with the label embedding
    appended to every step.

    The scalar head scores every step; losses average over steps, so each
    time point is judged rather than only the final hidden state.  With
    ``batch_stats`` the per-step, per-channel standard deviation across the
    batch is appended to every window, which lets the discriminator see
    collapsed variance.  Per-example (DP) training must leave it off.
    """

    def __init__(self, hidden, label_dim=8, cond_dim=0, in_dim=N_CHANNELS, batch_stats=False):
        super().__init__()
        self.batch_stats = batch_stats
        self.embed = nn.Embedding(2, label_dim)
        extra = in_dim if batch_stats else 0
        self.rnn = nn.LSTM(in_dim + extra + label_dim + cond_dim, hidden, num_layers=2, batch_first=True)
        self.head = nn.Linear(hidden, 1)

    def forward(self, x, labels, cond=None):
        steps = x.shape[1]
        if labels.dtype.is_floating_point:
            # soft labels from the DGAN label head
            e = labels[:, None] * self.embed.weight[1] + (1 - labels[:, None]) * self.embed.weight[0]
        else:
            e = self.embed(labels)
        parts = [x, e[:, None, :].expand(-1, steps, -1)]
        if self.batch_stats:
            sd = x.std(dim=0, unbiased=False) if len(x) > 1 else torch.zeros_like(x[0])
            parts.append(sd[None].expand(len(x), -1, -1))
        if cond is not None:
            parts.append(cond[:, None, :].expand(-1, steps, -1))
        h, _ = self.rnn(torch.cat(parts, dim=-1))
        return self.head(h).squeeze(-1)


def _mlp(inp, hidden, out):
    return nn.Sequential(nn.Linear(inp, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU(),
                         nn.Linear(hidden, out))


class DoppelGenerator(nn.Module):
    """Label head, per-window min/max head and a measurement LSTM.

    Measurements are generated in [0, 1] and rescaled by the generated
    per-channel min/max of the window.
    """

    def __init__(self, noise_dim, hidden, label_dim=8):
        super().__init__()
        self.noise_dim = noise_dim
        self.label_head = _mlp(noise_dim, hidden, 1)
        self.minmax_head = _mlp(noise_dim + 1, hidden, 2 * N_CHANNELS)
        self.measure = RecurrentGenerator(noise_dim, hidden, label_dim, cond_dim=2 * N_CHANNELS)

    def attributes(self, z_attr, labels_float):
        raw = self.minmax_head(torch.cat([z_attr, labels_float[:, None]], dim=-1))
        lo = torch.sigmoid(raw[:, :N_CHANNELS])
        hi = lo + (1 - lo) * torch.sigmoid(raw[:, N_CHANNELS:])
        return lo, hi

    def free_attributes(self, z_label, z_attr):
        """Soft label from the label head and the min/max it implies."""
        soft = torch.sigmoid(self.label_head(z_label).squeeze(-1))
        lo, hi = self.attributes(z_attr, soft)
        return soft, lo, hi

    def forward(self, z_label, z_attr, z_seq, labels=None):
        label_logit = self.label_head(z_label).squeeze(-1)
        soft = torch.sigmoid(label_logit)
        if labels is None:
            labels_f = soft
            hard = (soft >= 0.5).long()
        else:
            labels_f = labels.float()
            hard = labels
        lo, hi = self.attributes(z_attr, labels_f)
        norm = self.measure(z_seq, hard, torch.cat([lo, hi], dim=-1))
        x = lo[:, None, :] + (hi - lo)[:, None, :] * norm
        return x, labels_f, lo, hi


# ---------------------------------------------------------------------------
# artifact


def window_digests(windows) -> list[str]:
    """Short per-window content hashes, used for train/test overlap checks."""
    w = np.ascontiguousarray(np.asarray(windows, dtype=np.float64))
    return sorted(hashlib.blake2b(x.tobytes(), digest_size=8).hexdigest() for x in w)


def fingerprint(ws: WindowSet) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ws.windows).tobytes())
    h.update(np.ascontiguousarray(ws.labels).tobytes())
    h.update(np.ascontiguousarray(ws.subject_ids).tobytes())
    return h.hexdigest()


@dataclass
class GeneratorArtifact:
    kind: str
    config: GanConfig
    generator: nn.Module
    manifest: dict = field(default_factory=dict)
    certificate: dp.PrivacyCertificate | None = None

    output_shape = (WINDOW_S, N_CHANNELS)

    @property
    def train_subjects(self) -> list[int]:
        return list(self.manifest.get("train_subjects", []))

    def validate_certificate(self) -> float | None:
        if self.kind != "dp_cgan":
            if self.certificate is not None:
                raise dp.CertificateError("non-private generator carries a certificate")
            return None
        if self.certificate is None:
            raise dp.CertificateError("dp_cgan artifact without a privacy certificate")
        return self.certificate.validate(self.config.privacy.epsilon_target)

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        torch.save(self.generator.state_dict(), d / "weights.pt")
        manifest = {
            "kind": self.kind,
            "config": self.config.to_dict(),
            **self.manifest,
            "privacy_certificate": self.certificate.to_dict() if self.certificate else None,
        }
        with open(d / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return d

    @classmethod
    def load(cls, directory) -> "GeneratorArtifact":
        d = Path(directory)
        with open(d / "manifest.json") as fh:
            manifest = json.load(fh)
        cfg = GanConfig.from_dict(manifest.pop("config"))
        cert = manifest.pop("privacy_certificate", None)
        manifest.pop("kind", None)
        gen = _build_generator(cfg)
        gen.load_state_dict(torch.load(d / "weights.pt", weights_only=True))
        gen.eval()
        art = cls(cfg.kind, cfg, gen, manifest, dp.PrivacyCertificate.from_dict(cert) if cert else None)
        art.validate_certificate()
        return art


def _build_generator(cfg: GanConfig) -> nn.Module:
    if cfg.kind == "dgan":
        return DoppelGenerator(cfg.noise_dim, cfg.hidden, cfg.label_dim)
    return RecurrentGenerator(cfg.noise_dim, cfg.hidden, cfg.label_dim)


# ---------------------------------------------------------------------------
# training helpers


def _check_training_set(train: WindowSet):
    if len(train) == 0:
        raise ConditioningError("empty training set")
    present = set(np.unique(train.labels).tolist())
    if present != {0, 1}:
        raise ConditioningError(f"training set must contain both labels, found {sorted(present)}")


def _moment_gap(fake, real):
    """Mean absolute gap between batch means and stds at every (step, channel).
    Fake and real batches share one label vector, so pooled moments compare."""
    gap = (fake.mean(0) - real.mean(0)).abs().mean()
    if len(real) > 1:
        gap = gap + (fake.std(0) - real.std(0)).abs().mean()
    return gap


def _diversity(fake, z):
    """Mean pairwise L1 distance between generated windows over the mean
    pairwise L1 distance between their noise inputs (both per element)."""
    b = fake.shape[0]
    if b < 2:
        return fake.new_zeros(())
    f = fake.reshape(b, -1)
    zz = z.reshape(b, -1)
    df = torch.cdist(f, f, p=1).sum() / (b * (b - 1) * f.shape[1])
    dz = torch.cdist(zz, zz, p=1).sum() / (b * (b - 1) * zz.shape[1])
    return df / (dz + 1e-8)


def _bce(logits, target: float):
    return F.binary_cross_entropy_with_logits(logits, torch.full_like(logits, target))


def _batches(n, batch, gen):
    order = torch.randperm(n, generator=gen)
    for i in range(0, n, batch):
        yield order[i:i + batch]


def _finite(*vals):
    return all(math.isfinite(v) for v in vals)


def _manifest(cfg, train, traces, epochs_done, extra=None):
    m = {
        "data_fingerprint": fingerprint(train),
        "window_digests": window_digests(train.windows),
        "train_subjects": train.provenance,
        "n_train_windows": len(train),
        "epochs_completed": epochs_done,
        "loss_traces": traces,
        "conditioning_arity": 2,
        "output_shape": [WINDOW_S, N_CHANNELS],
    }
    m.update(extra or {})
    return m


class RealDataAccessLog:
    """Counts how often each update path touches real windows."""

    def __init__(self):
        self.counts: dict[str, int] = {}

    def __call__(self, path: str, n: int):
        self.counts[path] = self.counts.get(path, 0) + n


# ---------------------------------------------------------------------------
# CGAN


def train_cgan(train: WindowSet, cfg: GanConfig, access_hook: Callable | None = None,
               progress: Callable | None = None) -> GeneratorArtifact:
    if cfg.kind != "cgan":
        raise GanError("train_cgan needs kind='cgan'")
    _check_training_set(train)
    torch.manual_seed(cfg.seed)
    gen_rng = torch.Generator().manual_seed(cfg.seed)
    x_all = torch.as_tensor(train.windows, dtype=torch.float32)
    y_all = torch.as_tensor(train.labels, dtype=torch.long)
    G = RecurrentGenerator(cfg.noise_dim, cfg.hidden, cfg.label_dim)
    D = RecurrentDiscriminator(cfg.hidden, cfg.label_dim, batch_stats=True)
    opt_g = torch.optim.Adam(G.parameters(), lr=cfg.learning_rate, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(D.parameters(), lr=cfg.learning_rate, betas=(0.5, 0.999))
    batch = cfg.batch_size or len(train)
    traces = {"d_loss": [], "g_loss": [], "diversity": []}

    for epoch in range(cfg.epochs):
        d_sum = g_sum = div_sum = 0.0
        nb = 0
        for idx in _batches(len(train), batch, gen_rng):
            x, y = x_all[idx], y_all[idx]
            if access_hook:
                access_hook("discriminator", len(idx))
            b = len(idx)
            z = torch.randn(b, WINDOW_S, cfg.noise_dim, generator=gen_rng)
            fake = G(z, y)
            d_loss = _bce(D(x, y), 1.0) + _bce(D(fake.detach(), y), 0.0)
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()

            z = torch.randn(b, WINDOW_S, cfg.noise_dim, generator=gen_rng)
            fake = G(z, y)
            div = _diversity(fake, z)
            g_loss = _bce(D(fake, y), 1.0) - cfg.diversity_lambda * div.clamp(max=cfg.diversity_cap)
            if cfg.moment_weight:
                g_loss = g_loss + cfg.moment_weight * _moment_gap(fake, x)
            opt_g.zero_grad()
            g_loss.backward()
            opt_g.step()
            d_sum += d_loss.item()
            g_sum += g_loss.item()
            div_sum += div.item()
            nb += 1
        if not _finite(d_sum, g_sum):
            raise TrainingFailure("non-finite GAN loss", epoch - 1)
        traces["d_loss"].append(d_sum / nb)
        traces["g_loss"].append(g_sum / nb)
        traces["diversity"].append(div_sum / nb)
        if progress:
            progress(epoch, traces)
    G.eval()
    return GeneratorArtifact("cgan", cfg, G, _manifest(cfg, train, traces, cfg.epochs))


# ---------------------------------------------------------------------------
# DP-CGAN


def unique_window_count(train: WindowSet) -> int:
    """Number of non-overlapping windows inside a (possibly 30 s-stride) pool.

    Within every run of windows whose starts advance by exactly the stride,
    only every ``60 / stride``-th window carries new seconds.
    """
    if train.stride_s >= WINDOW_S:
        return len(train)
    step = WINDOW_S // train.stride_s
    order = np.lexsort((train.starts, train.subject_ids))
    sid, st = train.subject_ids[order], train.starts[order]
    count, pos = 0, 0
    for i in range(len(order)):
        if i > 0 and sid[i] == sid[i - 1] and st[i] - st[i - 1] == train.stride_s:
            pos += 1
        else:
            pos = 0
        if pos % step == 0:
            count += 1
    return count


def calibrate_gan_privacy(train: WindowSet, cfg: GanConfig) -> GanConfig:
    """Return a copy of ``cfg`` whose privacy spec carries sigma, q and steps.

    Accounting uses the unique window count; for 30 s-stride pools the epoch
    count is doubled instead of inflating the sampling rate.
    """
    if cfg.privacy is None:
        raise dp.CalibrationError("no privacy spec to calibrate")
    sliding = cfg.sliding_duplication and train.stride_s < WINDOW_S
    n_unique = unique_window_count(train)
    spec = dp.certify(cfg.privacy, n_unique, cfg.batch_size, cfg.epochs, sliding)
    out = copy.copy(cfg)
    out.privacy = spec
    return out


def _flat_grads(params):
    return np.concatenate([p.grad.detach().reshape(-1).double().numpy() if p.grad is not None
                           else np.zeros(p.numel()) for p in params])


def _assign_grads(params, flat):
    i = 0
    for p in params:
        n = p.numel()
        p.grad = torch.as_tensor(flat[i:i + n], dtype=p.dtype).reshape(p.shape).clone()
        i += n


class _LazyGrads:
    """Per-example gradients computed on iteration, so only one is held at a time."""

    def __init__(self, model, params, example_losses, n, optimizer):
        self.model, self.params, self.losses, self.n, self.opt = model, params, example_losses, n, optimizer

    def __len__(self):
        return self.n

    def __iter__(self):
        for i in range(self.n):
            self.opt.zero_grad()
            self.losses(i).backward()
            yield _flat_grads(self.params)


def private_step(model: nn.Module, example_losses: Callable[[int], torch.Tensor], n: int,
                 spec: dp.PrivacySpec, rng: np.random.Generator, optimizer) -> None:
    """One DP-Adam step: per-example gradients, clip_and_noise, optimizer update."""
    params = [p for p in model.parameters() if p.requires_grad]
    noisy = dp.clip_and_noise(_LazyGrads(model, params, example_losses, n, optimizer),
                              spec.clip_norm, spec.sigma, rng)
    _assign_grads(params, noisy)
    optimizer.step()


def train_dp_cgan(train: WindowSet, cfg: GanConfig, access_hook: Callable | None = None,
                  progress: Callable | None = None) -> GeneratorArtifact:
    if cfg.kind != "dp_cgan":
        raise GanError("train_dp_cgan needs kind='dp_cgan'")
    if cfg.privacy is None or not cfg.privacy.calibrated:
        raise dp.CalibrationError("dp_cgan needs a calibrated privacy spec (see calibrate_gan_privacy)")
    _check_training_set(train)
    spec = cfg.privacy
    torch.manual_seed(cfg.seed)
    gen_rng = torch.Generator().manual_seed(cfg.seed)
    noise_rng = np.random.default_rng(cfg.seed)
    x_all = torch.as_tensor(train.windows, dtype=torch.float32)
    y_all = torch.as_tensor(train.labels, dtype=torch.long)
    G = RecurrentGenerator(cfg.noise_dim, cfg.hidden, cfg.label_dim)
    D = RecurrentDiscriminator(cfg.hidden, cfg.label_dim)
    opt_g = torch.optim.Adam(G.parameters(), lr=cfg.learning_rate, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(D.parameters(), lr=cfg.learning_rate, betas=(0.5, 0.999))
    batch = cfg.batch_size
    traces = {"d_loss": [], "g_loss": [], "diversity": []}

    steps_done, epoch = 0, 0
    while steps_done < spec.steps:
        d_sum = g_sum = div_sum = 0.0
        nb = 0
        for idx in _batches(len(train), batch, gen_rng):
            if steps_done >= spec.steps:
                break
            b = len(idx)

            def dp_discriminator_step():
                # the only place real windows are read
                x, y = x_all[idx], y_all[idx]
                if access_hook:
                    access_hook("discriminator_dp", b)
                z = torch.randn(b, WINDOW_S, cfg.noise_dim, generator=gen_rng)
                with torch.no_grad():
                    fake = G(z, y)
                losses = []

                def example_loss(i):
                    lr = D(x[i:i + 1], y[i:i + 1])
                    lf = D(fake[i:i + 1], y[i:i + 1])
                    loss = _bce(lr, 1.0) + _bce(lf, 0.0)
                    losses.append(loss.item())
                    return loss

                private_step(D, example_loss, b, spec, noise_rng, opt_d)
                return float(np.mean(losses))

            d_loss = dp_discriminator_step()

            # generator labels are drawn independently of the data
            yg = torch.randint(0, 2, (b,), generator=gen_rng)
            z = torch.randn(b, WINDOW_S, cfg.noise_dim, generator=gen_rng)
            fake = G(z, yg)
            div = _diversity(fake, z)
            g_loss = _bce(D(fake, yg), 1.0) - cfg.diversity_lambda * div.clamp(max=cfg.diversity_cap)
            opt_g.zero_grad()
            g_loss.backward()
            opt_g.step()
            D.zero_grad()
            if access_hook:
                access_hook("generator", 0)
            steps_done += 1
            d_sum += d_loss
            g_sum += g_loss.item()
            div_sum += div.item()
            nb += 1
        if not _finite(d_sum, g_sum):
            raise TrainingFailure("non-finite DP-GAN loss", epoch - 1)
        traces["d_loss"].append(d_sum / nb)
        traces["g_loss"].append(g_sum / nb)
        traces["diversity"].append(div_sum / nb)
        if progress:
            progress(epoch, traces)
        epoch += 1

    if steps_done != spec.steps:
        raise dp.CertificateError(f"ran {steps_done} steps, accounted for {spec.steps}")
    cert = dp.certificate_for(spec)
    G.eval()
    manifest = _manifest(cfg, train, traces, epoch,
                         {"n_unique_windows": unique_window_count(train), "dp_steps": steps_done})
    art = GeneratorArtifact("dp_cgan", cfg, G, manifest, cert)
    art.validate_certificate()
    return art


# ---------------------------------------------------------------------------
# DGAN


def window_minmax(windows: torch.Tensor):
    return windows.min(dim=1).values, windows.max(dim=1).values


def train_dgan(train: WindowSet, cfg: GanConfig, access_hook: Callable | None = None,
               progress: Callable | None = None) -> GeneratorArtifact:
    if cfg.kind != "dgan":
        raise GanError("train_dgan needs kind='dgan'")
    _check_training_set(train)
    torch.manual_seed(cfg.seed)
    gen_rng = torch.Generator().manual_seed(cfg.seed)
    x_all = torch.as_tensor(train.windows, dtype=torch.float32)
    y_all = torch.as_tensor(train.labels, dtype=torch.long)
    G = DoppelGenerator(cfg.noise_dim, cfg.hidden, cfg.label_dim)
    attr_dim = 2 * N_CHANNELS
    D = RecurrentDiscriminator(cfg.hidden, cfg.label_dim, cond_dim=attr_dim, batch_stats=True)
    D_aux = _mlp(1 + attr_dim, cfg.hidden, 1)
    opt_g = torch.optim.Adam(G.parameters(), lr=cfg.learning_rate, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(list(D.parameters()) + list(D_aux.parameters()),
                             lr=cfg.learning_rate, betas=(0.5, 0.999))
    batch = cfg.batch_size or len(train)
    traces = {"d_loss": [], "g_loss": [], "aux_loss": []}

    def aux(labels_f, lo, hi):
        return D_aux(torch.cat([labels_f[:, None], lo, hi], dim=-1)).squeeze(-1)

    def noise(b):
        return (torch.randn(b, cfg.noise_dim, generator=gen_rng),
                torch.randn(b, cfg.noise_dim, generator=gen_rng),
                torch.randn(b, WINDOW_S, cfg.noise_dim, generator=gen_rng))

    for epoch in range(cfg.epochs):
        d_sum = g_sum = a_sum = 0.0
        nb = 0
        for idx in _batches(len(train), batch, gen_rng):
            x, y = x_all[idx], y_all[idx]
            if access_hook:
                access_hook("discriminator", len(idx))
            b = len(idx)
            lo_r, hi_r = window_minmax(x)
            yf = y.float()
            # conditional path (batch labels) trains the min/max and measurement
            # heads; the free path trains the label head through the aux critic
            with torch.no_grad():
                fx, _, flo, fhi = G(*noise(b), labels=y)
                zl, za, _ = noise(b)
                sl, slo, shi = G.free_attributes(zl, za)
            d_main = _bce(D(x, yf, torch.cat([lo_r, hi_r], -1)), 1.0) + \
                _bce(D(fx, yf, torch.cat([flo, fhi], -1)), 0.0)
            d_aux = _bce(aux(yf, lo_r, hi_r), 1.0) + \
                0.5 * (_bce(aux(yf, flo, fhi), 0.0) + _bce(aux(sl, slo, shi), 0.0))
            d_loss = d_main + d_aux
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()

            fx, _, flo, fhi = G(*noise(b), labels=y)
            zl, za, _ = noise(b)
            sl, slo, shi = G.free_attributes(zl, za)
            g_main = _bce(D(fx, yf, torch.cat([flo, fhi], -1)), 1.0)
            g_aux = 0.5 * (_bce(aux(yf, flo, fhi), 1.0) + _bce(aux(sl, slo, shi), 1.0))
            g_loss = g_main + g_aux
            opt_g.zero_grad()
            g_loss.backward()
            opt_g.step()
            d_sum += d_loss.item()
            g_sum += g_loss.item()
            a_sum += d_aux.item()
            nb += 1
        if not _finite(d_sum, g_sum):
            raise TrainingFailure("non-finite GAN loss", epoch - 1)
        traces["d_loss"].append(d_sum / nb)
        traces["g_loss"].append(g_sum / nb)
        traces["aux_loss"].append(a_sum / nb)
        if progress:
            progress(epoch, traces)
    G.eval()
    return GeneratorArtifact("dgan", cfg, G, _manifest(cfg, train, traces, cfg.epochs,
                                                       {"optimizer_steps_per_epoch": nb}))


TRAINERS = {"cgan": train_cgan, "dgan": train_dgan, "dp_cgan": train_dp_cgan}


def train_gan(train: WindowSet, cfg: GanConfig, **kw) -> GeneratorArtifact:
    """Dispatch on ``cfg.kind``; DP configs are calibrated first if needed."""
    if cfg.kind == "dp_cgan" and not cfg.privacy.calibrated:
        cfg = calibrate_gan_privacy(train, cfg)
    return TRAINERS[cfg.kind](train, cfg, **kw)


# ---------------------------------------------------------------------------
# sampling


@torch.no_grad()
def sample_windows(g: GeneratorArtifact, n: int, label: int, seed: int = 42) -> WindowSet:
    if n < 1:
        raise ValueError("n must be >= 1")
    if label not in (0, 1):
        raise ConditioningError("label must be 0 or 1")
    rng = torch.Generator().manual_seed(int(seed))
    cfg = g.config
    g.generator.eval()
    labels = torch.full((n,), label, dtype=torch.long)
    if g.kind == "dgan":
        zl = torch.randn(n, cfg.noise_dim, generator=rng)
        za = torch.randn(n, cfg.noise_dim, generator=rng)
        zs = torch.randn(n, WINDOW_S, cfg.noise_dim, generator=rng)
        x = g.generator(zl, za, zs, labels)[0]
    else:
        z = torch.randn(n, WINDOW_S, cfg.noise_dim, generator=rng)
        x = g.generator(z, labels)
    x = x.double().clamp(0.0, 1.0).numpy()
    return WindowSet(x, np.full(n, label), 60, np.full(n, -1), np.arange(n) * WINDOW_S)


@torch.no_grad()
def sample_attributes(g: GeneratorArtifact, n: int, label: int, seed: int = 42):
    """Per-window (min, max) metadata from a DGAN's attribute head, each (n, 6)."""
    if g.kind != "dgan":
        raise GanError("only dgan artifacts have an attribute head")
    rng = torch.Generator().manual_seed(int(seed))
    z = torch.randn(n, g.config.noise_dim, generator=rng)
    lo, hi = g.generator.attributes(z, torch.full((n,), float(label)))
    return lo.double().numpy(), hi.double().numpy()


@dataclass
class SyntheticSubject:
    pseudo_id: int
    windows: WindowSet

    @property
    def stress_fraction(self) -> float:
        return float(self.windows.labels.mean())


def synthesize_subjects(g: GeneratorArtifact, count: int, seed: int = 42,
                        id_base: int = SYNTHETIC_ID_BASE) -> list[SyntheticSubject]:
    """``count`` subjects of 36 windows each, 11 of them stress, in seeded random order."""
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    n_stress, n_calm = SUBJECT_STRESS_WINDOWS, SUBJECT_WINDOWS - SUBJECT_STRESS_WINDOWS
    for i in range(count):
        sub_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        stress = sample_windows(g, n_stress, 1, sub_seed)
        calm = sample_windows(g, n_calm, 0, sub_seed + 1)
        order = np.random.default_rng(sub_seed).permutation(SUBJECT_WINDOWS)
        wins = np.concatenate([stress.windows, calm.windows])[order]
        labels = np.concatenate([stress.labels, calm.labels])[order]
        pid = id_base + i
        ws = WindowSet(wins, labels, 60, np.full(SUBJECT_WINDOWS, pid),
                       np.arange(SUBJECT_WINDOWS) * WINDOW_S)
        out.append(SyntheticSubject(pid, ws))
    return out


def subjects_to_windowset(subjects: list[SyntheticSubject]) -> WindowSet:
    return WindowSet.concat([s.windows for s in subjects])
