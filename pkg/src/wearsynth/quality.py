"""Fidelity checks for synthetic windows: PCA and t-SNE projections, Pearson
correlation with p-values, value histograms and a classifier two-sample test."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from sklearn.decomposition import PCA
from sklearn.manifold import TSNE
from sklearn.model_selection import train_test_split
from sklearn.naive_bayes import GaussianNB

from .ingest import CHANNELS
from .preprocess import N_CHANNELS, WINDOW_S, WindowSet

log = logging.getLogger(__name__)

CORR_COLUMNS = (*CHANNELS, "label")


class QualityError(ValueError):
    pass


def flatten(ws: WindowSet) -> np.ndarray:
    """(N, 360) row-major flattening: time outer, channel inner."""
    return ws.windows.reshape(len(ws), WINDOW_S * N_CHANNELS)


@dataclass
class PcaResult:
    real_points: np.ndarray
    synth_points: np.ndarray
    explained_variance_ratio: np.ndarray
    contributions: dict[str, list[float]]   # signal -> [PC1, PC2]
    model: PCA = field(repr=False, default=None)


def pca_project(real: WindowSet, synth: WindowSet | None = None, n_components: int = 2) -> PcaResult:
    """Fit PCA on real windows only and project both sets with that basis.

    A signal's contribution to a component is the sum of absolute loadings
    over its 60 columns, signed by the net loading.
    """
    xr = flatten(real)
    if len(xr) < 3:
        raise QualityError("PCA needs at least 3 real samples")
    pca = PCA(n_components=n_components, svd_solver="full").fit(xr)
    loadings = pca.components_.reshape(n_components, WINDOW_S, N_CHANNELS)
    contrib = {}
    for j, name in enumerate(CHANNELS):
        col = loadings[:, :, j]
        contrib[name] = (np.abs(col).sum(axis=1) * np.sign(col.sum(axis=1))).tolist()
    synth_pts = pca.transform(flatten(synth)) if synth is not None and len(synth) else np.empty((0, 2))
    return PcaResult(pca.transform(xr), synth_pts, pca.explained_variance_ratio_, contrib, pca)


def tsne_embed(samples: np.ndarray, perplexity: float = 30.0, seed: int = 42) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 3:
        samples = samples.reshape(len(samples), -1)
    if len(samples) <= 3 * perplexity:
        raise QualityError(f"t-SNE with perplexity {perplexity} needs more than {3 * perplexity:g} samples")
    return TSNE(n_components=2, perplexity=perplexity, random_state=seed, init="pca").fit_transform(samples)


# ---------------------------------------------------------------------------


@dataclass
class CorrelationReport:
    r: np.ndarray              # (k, k), nan where undefined
    p: np.ndarray              # (k, k), diagonal 1
    columns: tuple[str, ...] = CORR_COLUMNS
    degenerate: list[str] = field(default_factory=list)

    def pair(self, a: str, b: str) -> tuple[float, float]:
        i, j = self.columns.index(a), self.columns.index(b)
        return float(self.r[i, j]), float(self.p[i, j])

    def to_dict(self) -> dict:
        def clean(m):
            return [[None if not np.isfinite(v) else float(v) for v in row] for row in m]
        return {"columns": list(self.columns), "r": clean(self.r), "p": clean(self.p),
                "degenerate": self.degenerate}


def session_rows(ws: WindowSet) -> np.ndarray:
    """Per-second rows (6 signals + label) from windows; each window's label
    is repeated over its 60 seconds."""
    x = ws.windows.reshape(-1, N_CHANNELS)
    y = np.repeat(ws.labels, WINDOW_S).astype(float)
    return np.column_stack([x, y])


def correlation_with_p(rows, columns=CORR_COLUMNS) -> CorrelationReport:
    """Pearson r for every column pair; p from the two-sided t test with n-2 dof."""
    rows = np.asarray(rows, dtype=np.float64)
    n, k = rows.shape
    if n < 3:
        raise QualityError("correlation needs at least 3 rows")
    centered = rows - rows.mean(axis=0)
    ss = np.sqrt((centered ** 2).sum(axis=0))
    degenerate = [columns[j] for j in range(k) if ss[j] == 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (centered.T @ centered) / np.outer(ss, ss)
    r = np.clip(r, -1.0, 1.0)
    np.fill_diagonal(r, 1.0)
    bad = ss == 0
    r[bad, :] = np.nan
    r[:, bad] = np.nan
    dof = n - 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t = r * np.sqrt(dof / np.maximum(1.0 - r ** 2, 0.0))
    p = 2.0 * stats.t.sf(np.abs(t), dof)
    p[np.abs(r) >= 1.0] = 0.0
    np.fill_diagonal(p, 1.0)
    p[bad, :] = np.nan
    p[:, bad] = np.nan
    return CorrelationReport(r, p, tuple(columns), degenerate)


def distribution_histogram(values, bins: int = 50):
    """Density histogram over [0, 1]; returns (density, edges)."""
    if bins < 2:
        raise QualityError("need at least 2 bins")
    values = np.asarray(values, dtype=np.float64).ravel()
    edges = np.linspace(0.0, 1.0, bins + 1)
    if values.size == 0:
        return np.zeros(0), edges
    counts, _ = np.histogram(np.clip(values, 0.0, 1.0), bins=edges)
    return counts / (values.size * np.diff(edges)), edges


def signal_histograms(ws: WindowSet, bins: int = 50) -> dict:
    """{signal: {label: density}} for every signal and label present."""
    out = {}
    for j, name in enumerate(CHANNELS):
        out[name] = {}
        for y in (0, 1):
            vals = ws.windows[ws.labels == y][:, :, j]
            out[name][y] = distribution_histogram(vals, bins)[0]
    return out


# ---------------------------------------------------------------------------


def _balance(real: WindowSet, synth: WindowSet, rng):
    """Equal real/synthetic counts per label stratum (downsample the larger side)."""
    xs, origin, label = [], [], []
    skipped = []
    for y in (0, 1):
        r = flatten(real)[real.labels == y]
        s = flatten(synth)[synth.labels == y]
        m = min(len(r), len(s))
        if m < 2:
            skipped.append(y)
            continue
        r = r[rng.choice(len(r), m, replace=False)]
        s = s[rng.choice(len(s), m, replace=False)]
        xs += [r, s]
        origin += [np.zeros(m), np.ones(m)]
        label += [np.full(m, y), np.full(m, y)]
    if not xs:
        return None, None, None, skipped
    return np.concatenate(xs), np.concatenate(origin), np.concatenate(label), skipped


def c2st(real: WindowSet, synth: WindowSet, seed: int = 42, test_size: float = 0.3) -> dict:
    """Gaussian naive Bayes real-vs-synthetic accuracy on flattened windows.

    ``accuracy_stress`` / ``accuracy_nonstress`` restrict the test split to
    the respective true label; a missing stratum reports ``None``.
    """
    rng = np.random.default_rng(seed)
    x, origin, label, skipped = _balance(real, synth, rng)
    result = {"accuracy_both": None, "accuracy_stress": None, "accuracy_nonstress": None,
              "skipped_strata": ["stress" if y else "nonstress" for y in skipped]}
    if x is None:
        return result
    strata = origin * 2 + label
    idx_train, idx_test = train_test_split(np.arange(len(x)), test_size=test_size,
                                           stratify=strata, random_state=seed)
    clf = GaussianNB().fit(x[idx_train], origin[idx_train])
    pred = clf.predict(x[idx_test])
    hit = pred == origin[idx_test]
    result["n_test"] = int(len(idx_test))
    result["accuracy_both"] = float(hit.mean())
    for y, key in ((1, "accuracy_stress"), (0, "accuracy_nonstress")):
        sel = label[idx_test] == y
        if sel.any() and y not in skipped:
            result[key] = float(hit[sel].mean())
    return result


def quality_report(real: WindowSet, synth: WindowSet, seed: int = 42, bins: int = 50) -> dict:
    """All metrics as a JSON-friendly dict."""
    pca = pca_project(real, synth)
    corr_real = correlation_with_p(session_rows(real))
    corr_synth = correlation_with_p(session_rows(synth))
    return {
        "n_real": len(real),
        "n_synthetic": len(synth),
        "pca": {"explained_variance_ratio": pca.explained_variance_ratio.tolist(),
                "contributions": pca.contributions},
        "correlation_real": corr_real.to_dict(),
        "correlation_synthetic": corr_synth.to_dict(),
        "c2st": c2st(real, synth, seed),
        "histogram_bins": bins,
    }
