"""Stress classifiers over averaged spectra (6 signals x 210 bins).

Three torch models share one input/output contract (two logits, argmax with
ties going to stress): a per-signal CNN, the CNN with two LSTM layers in
front of the dense head, and a small transformer over the six signal
tokens.  Any of them can be trained with DP-Adam.  A logistic regression on
per-signal spectral power serves as the interpretable baseline.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from sklearn.preprocessing import StandardScaler
from torch import nn
from torch.nn import functional as F

from . import dp
from .ingest import CHANNELS
from .metrics import f1_accuracy
from .spectral import N_BINS, SpectralFeatures, all_combinations

log = logging.getLogger(__name__)

KINDS = ("tsct", "cnn", "cnn_lstm", "logreg")
N_SIGNALS = len(CHANNELS)


class ClassifierError(Exception):
    pass


class TrainingFailure(ClassifierError):
    pass


_EPOCHS = {"tsct": 110, "cnn": 10, "cnn_lstm": 20, "logreg": 1}


@dataclass
class ClassifierConfig:
    kind: str = "tsct"
    epochs: int = 110
    batch: int = 50
    learning_rate: float = 1e-3
    class_weighting: bool = True
    privacy: dp.PrivacySpec | None = None
    seed: int = 42
    conv_widths: tuple = (32, 64)
    kernel: int = 5
    dense: int = 128
    lstm_sizes: tuple = (128, 64)
    model_width: int = 128
    heads: int = 4
    blocks: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ClassifierError(f"unknown classifier kind {self.kind!r}")
        if self.kind == "logreg" and self.privacy is not None:
            raise ClassifierError("DP training is only available for the neural classifiers")

    @classmethod
    def defaults(cls, kind: str, **overrides) -> "ClassifierConfig":
        if kind not in KINDS:
            raise ClassifierError(f"unknown classifier kind {kind!r}")
        return cls(kind=kind, **{"epochs": _EPOCHS[kind], **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["privacy"] = asdict(self.privacy) if self.privacy else None
        d["conv_widths"], d["lstm_sizes"] = list(self.conv_widths), list(self.lstm_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        d = dict(d)
        if d.get("privacy"):
            d["privacy"] = dp.PrivacySpec(**d["privacy"])
        for k in ("conv_widths", "lstm_sizes"):
            if k in d:
                d[k] = tuple(d[k])
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# ---------------------------------------------------------------------------
# networks, all (B, 6, 210) -> (B, 2)


class _ConvStack(nn.Module):
    """Independent conv blocks per signal via grouped convolutions."""

    def __init__(self, widths, kernel):
        super().__init__()
        layers, c_in, length = [], N_SIGNALS, N_BINS
        for w in widths:
            layers += [nn.Conv1d(c_in, N_SIGNALS * w, kernel, groups=N_SIGNALS), nn.ReLU(), nn.MaxPool1d(2)]
            c_in = N_SIGNALS * w
            length = (length - kernel + 1) // 2
        self.net = nn.Sequential(*layers)
        self.channels, self.length = c_in, length

    def forward(self, x):
        return self.net(x)


class CnnClassifier(nn.Module):
    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        self.conv = _ConvStack(cfg.conv_widths, cfg.kernel)
        self.head = nn.Sequential(nn.Flatten(), nn.Linear(self.conv.channels * self.conv.length, cfg.dense),
                                  nn.ReLU(), nn.Linear(cfg.dense, 2))

    def forward(self, x):
        return self.head(self.conv(x))


class CnnLstmClassifier(nn.Module):
    """Conv features read as a sequence along the frequency axis."""

    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        self.conv = _ConvStack(cfg.conv_widths, cfg.kernel)
        sizes = [self.conv.channels, *cfg.lstm_sizes]
        self.rnns = nn.ModuleList(nn.LSTM(a, b, batch_first=True) for a, b in zip(sizes, sizes[1:]))
        self.head = nn.Sequential(nn.Linear(sizes[-1], cfg.dense), nn.ReLU(), nn.Linear(cfg.dense, 2))

    def forward(self, x):
        h = self.conv(x).transpose(1, 2)
        for rnn in self.rnns:
            h, _ = rnn(h)
        return self.head(h[:, -1])


class TsctClassifier(nn.Module):
    """Self-attention over six 210-bin signal tokens, mean-pooled."""

    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        self.proj = nn.Linear(N_BINS, cfg.model_width)
        self.pos = nn.Parameter(torch.zeros(1, N_SIGNALS, cfg.model_width))
        layer = nn.TransformerEncoderLayer(cfg.model_width, cfg.heads, dim_feedforward=2 * cfg.model_width,
                                           dropout=0.1, batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, cfg.blocks, enable_nested_tensor=False)
        self.out = nn.Linear(cfg.model_width, 2)

    def forward(self, x):
        h = self.encoder(self.proj(x) + self.pos)
        return self.out(h.mean(dim=1))


_NETS = {"cnn": CnnClassifier, "cnn_lstm": CnnLstmClassifier, "tsct": TsctClassifier}


def build_network(cfg: ClassifierConfig) -> nn.Module:
    torch.manual_seed(cfg.seed)
    return _NETS[cfg.kind](cfg)


# ---------------------------------------------------------------------------


def as_feature_array(features) -> np.ndarray:
    if isinstance(features, (list, tuple)) and features and isinstance(features[0], SpectralFeatures):
        features = np.stack([f.matrix for f in features])
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (N_SIGNALS, N_BINS):
        raise ClassifierError(f"expected features of shape (N, {N_SIGNALS}, {N_BINS}), got {x.shape}")
    return x


def class_weights(labels) -> np.ndarray:
    """Inverse-frequency weights n / (2 n_c); the ratio w1/w0 equals n0/n1."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=2).astype(float)
    if (counts == 0).any():
        raise ClassifierError("both classes are required")
    return len(labels) / (2.0 * counts)


def logits_to_labels(logits: np.ndarray) -> np.ndarray:
    return (logits[:, 1] >= logits[:, 0]).astype(int)


@dataclass
class FittedClassifier:
    kind: str
    config: ClassifierConfig
    model: object                      # nn.Module or fitted sklearn pipeline parts
    mean: np.ndarray                   # feature standardisation fitted on training data
    scale: np.ndarray
    manifest: dict = field(default_factory=dict)
    certificate: dp.PrivacyCertificate | None = None

    def _standardise(self, x):
        return (x - self.mean) / self.scale

    def scores(self, features) -> np.ndarray:
        """Stress probability per window."""
        return self.predict(features)[1]

    def predict(self, features) -> tuple[np.ndarray, np.ndarray]:
        x = as_feature_array(features)
        if self.kind == "logreg":
            p = self.model.predict_proba(self._standardise(signal_powers(x)))[:, 1]
            return (p >= 0.5).astype(int), p
        self.model.eval()
        with torch.no_grad():
            logits = self.model(torch.as_tensor(self._standardise(x), dtype=torch.float32)).double().numpy()
        prob = np.exp(logits[:, 1] - np.logaddexp(logits[:, 0], logits[:, 1]))
        return logits_to_labels(logits), prob

    def validate_certificate(self):
        if self.config.privacy is None:
            if self.certificate is not None:
                raise dp.CertificateError("non-private classifier carries a certificate")
            return None
        if self.certificate is None:
            raise dp.CertificateError("DP classifier without a certificate")
        return self.certificate.validate(self.config.privacy.epsilon_target)

    def save(self, directory) -> Path:
        if self.kind == "logreg":
            raise ClassifierError("the logistic baseline is not persisted")
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        torch.save(self.model.state_dict(), d / "weights.pt")
        meta = {"kind": self.kind, "config": self.config.to_dict(), "mean": self.mean.tolist(),
                "scale": self.scale.tolist(), **self.manifest,
                "privacy_certificate": self.certificate.to_dict() if self.certificate else None}
        with open(d / "manifest.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        return d

    @classmethod
    def load(cls, directory) -> "FittedClassifier":
        d = Path(directory)
        with open(d / "manifest.json") as fh:
            meta = json.load(fh)
        cfg = ClassifierConfig.from_dict(meta.pop("config"))
        cert = meta.pop("privacy_certificate", None)
        mean, scale = np.asarray(meta.pop("mean")), np.asarray(meta.pop("scale"))
        meta.pop("kind", None)
        net = build_network(cfg)
        net.load_state_dict(torch.load(d / "weights.pt", weights_only=True))
        net.eval()
        out = cls(cfg.kind, cfg, net, mean, scale, meta,
                  dp.PrivacyCertificate.from_dict(cert) if cert else None)
        out.validate_certificate()
        return out


def signal_powers(x: np.ndarray) -> np.ndarray:
    return (x ** 2).sum(axis=-1)


def _fit_scaler(x):
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def calibrate_classifier_privacy(cfg: ClassifierConfig, n_train: int) -> ClassifierConfig:
    """Sampling rate batch/n_train over every training window, including
    synthetic ones, since batches are drawn from the whole pool."""
    if cfg.privacy is None:
        raise dp.CalibrationError("no privacy spec to calibrate")
    out = copy.copy(cfg)
    out.privacy = dp.certify(cfg.privacy, n_train, cfg.batch, cfg.epochs, False)
    return out


def train(features, labels, cfg: ClassifierConfig, progress=None) -> FittedClassifier:
    x = as_feature_array(features)
    y = np.asarray(labels).astype(int)
    if len(x) != len(y):
        raise ClassifierError("features and labels differ in length")
    if set(np.unique(y).tolist()) != {0, 1}:
        raise ClassifierError(f"training data must contain both classes, found {sorted(set(y.tolist()))}")
    if cfg.kind == "logreg":
        return _train_logreg(x, y, cfg)
    if cfg.privacy is not None and not cfg.privacy.calibrated:
        cfg = calibrate_classifier_privacy(cfg, len(x))
    return _train_torch(x, y, cfg, progress)


def _train_logreg(x, y, cfg):
    p = signal_powers(x)
    mean, scale = _fit_scaler(p)
    clf = LogisticRegression(max_iter=1000, class_weight="balanced" if cfg.class_weighting else None,
                             random_state=cfg.seed).fit((p - mean) / scale, y)
    return FittedClassifier("logreg", cfg, clf, mean, scale, {"n_train": len(y)})


def _train_torch(x, y, cfg, progress):
    mean, scale = _fit_scaler(x)
    xt = torch.as_tensor((x - mean) / scale, dtype=torch.float32)
    yt = torch.as_tensor(y, dtype=torch.long)
    net = build_network(cfg)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    weight = torch.as_tensor(class_weights(y), dtype=torch.float32) if cfg.class_weighting else None
    gen = torch.Generator().manual_seed(cfg.seed)
    spec = cfg.privacy
    noise_rng = np.random.default_rng(cfg.seed)
    traces = {"loss": [], "train_accuracy": []}
    steps = 0
    target_steps = spec.steps if spec is not None else None

    for epoch in range(10 ** 9):
        if target_steps is None and epoch >= cfg.epochs:
            break
        if target_steps is not None and steps >= target_steps:
            break
        net.train()
        order = torch.randperm(len(x), generator=gen)
        total, count = 0.0, 0
        for i in range(0, len(x), cfg.batch):
            if target_steps is not None and steps >= target_steps:
                break
            idx = order[i:i + cfg.batch]
            xb, yb = xt[idx], yt[idx]
            if spec is None:
                loss = F.cross_entropy(net(xb), yb, weight=weight)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            else:
                losses = []

                def example_loss(j):
                    # weighted per-example loss, normalised like the batch mean
                    lj = F.cross_entropy(net(xb[j:j + 1]), yb[j:j + 1], weight=weight,
                                         reduction="sum")
                    if weight is not None:
                        lj = lj / weight.mean()
                    losses.append(lj.item())
                    return lj

                from .gan import private_step
                private_step(net, example_loss, len(idx), spec, noise_rng, opt)
                total += float(np.sum(losses))
            count += len(idx)
            steps += 1
        if not math.isfinite(total):
            raise TrainingFailure(f"non-finite loss in epoch {epoch}")
        net.eval()
        with torch.no_grad():
            acc = (logits_to_labels(net(xt).numpy()) == y).mean()
        traces["loss"].append(total / max(count, 1))
        traces["train_accuracy"].append(float(acc))
        if progress:
            progress(epoch, traces)

    cert = None
    if spec is not None:
        if steps != spec.steps:
            raise dp.CertificateError(f"ran {steps} steps, accounted for {spec.steps}")
        cert = dp.certificate_for(spec)
    net.eval()
    out = FittedClassifier(cfg.kind, cfg, net, mean, scale,
                           {"n_train": len(y), "optimizer_steps": steps, "loss_traces": traces}, cert)
    out.validate_certificate()
    return out


def predict(model: FittedClassifier, features):
    return model.predict(features)


# ---------------------------------------------------------------------------
# spectral-power logistic baseline


def lr_baseline(powers, labels, subject_ids, combo, seed: int = 42) -> dict:
    """LOSO logistic regression on the selected per-window signal powers.

    Returns the mean per-subject F1/accuracy, per-fold scores and the
    coefficients averaged over folds (in standardised units).
    """
    combo = tuple(combo)
    if not combo:
        raise ClassifierError("signal combination must not be empty")
    cols = [CHANNELS.index(c) for c in combo]
    x = np.asarray(powers, dtype=np.float64)[:, cols]
    y, sids = np.asarray(labels).astype(int), np.asarray(subject_ids)
    folds, coefs, flags = {}, [], []
    for s in np.unique(sids):
        tr, te = sids != s, sids == s
        if len(np.unique(y[tr])) < 2:
            flags.append(f"fold {int(s)}: single-class training data")
            folds[int(s)] = f1_accuracy(np.zeros(te.sum(), int), y[te])
            continue
        mean, scale = x[tr].mean(0), x[tr].std(0)
        const = scale == 0
        if const.any():
            flags.append(f"fold {int(s)}: constant feature {[combo[i] for i in np.flatnonzero(const)]}")
            scale[const] = 1.0
        clf = LogisticRegression(max_iter=1000, random_state=seed).fit((x[tr] - mean) / scale, y[tr])
        folds[int(s)] = f1_accuracy(clf.predict((x[te] - mean) / scale), y[te])
        coefs.append(clf.coef_[0])
    f1s = [sc.f1 for sc in folds.values()]
    accs = [sc.accuracy for sc in folds.values()]
    return {
        "combo": list(combo),
        "f1": float(np.mean(f1s)),
        "accuracy": float(np.mean(accs)),
        "per_subject": {k: {"f1": v.f1, "accuracy": v.accuracy, "degenerate": v.degenerate}
                        for k, v in folds.items()},
        "coefficients": dict(zip(combo, np.mean(coefs, axis=0).tolist())) if coefs else {},
        "flags": flags,
    }


def sweep_combinations(powers, labels, subject_ids, seed: int = 42) -> list[dict]:
    """lr_baseline for all 63 non-empty signal subsets, in enumeration order."""
    return [lr_baseline(powers, labels, subject_ids, c, seed) for c in all_combinations()]
