import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from sklearn.metrics import silhouette_score

from wearsynth import quality as q
from wearsynth.preprocess import WindowSet
from wearsynth.toydata import gaussian_corpus


def _ws(x, labels=None):
    x = np.asarray(x)
    labels = np.zeros(len(x), dtype=int) if labels is None else labels
    return WindowSet(x, labels)


# -- PCA -----------------------------------------------------------------------

def test_pca_identity():
    ws = gaussian_corpus(50, seed=1)
    res = q.pca_project(ws, ws)
    np.testing.assert_array_equal(res.real_points, res.synth_points)


def test_pca_fit_on_real_only_is_stable():
    real, synth = gaussian_corpus(40, seed=1), gaussian_corpus(40, seed=2)
    a, b = q.pca_project(real, synth), q.pca_project(real, gaussian_corpus(10, seed=3))
    np.testing.assert_array_equal(a.real_points, b.real_points)


def test_pca_isotropic_components_balanced():
    rng = np.random.default_rng(0)
    ws = _ws(0.5 + 0.01 * rng.normal(size=(5000, 60, 6)))
    ev = q.pca_project(ws).explained_variance_ratio
    assert abs(ev[0] - ev[1]) / ev[0] < 0.1


def test_pca_contribution_tracks_varying_signal():
    rng = np.random.default_rng(0)
    x = np.full((200, 60, 6), 0.5) + 0.001 * rng.normal(size=(200, 60, 6))
    x[:, :, 4] += rng.normal(size=(200, 1)) * 0.2     # EDA carries the variance
    c = q.pca_project(_ws(x)).contributions
    assert abs(c["EDA"][0]) > 10 * abs(c["BVP"][0])


def test_pca_needs_three_samples():
    with pytest.raises(q.QualityError):
        q.pca_project(gaussian_corpus(2))


# -- t-SNE -----------------------------------------------------------------------

def test_tsne_deterministic_and_blobs_separate():
    rng = np.random.default_rng(0)
    a = rng.normal(0, 1, size=(60, 20))
    b = rng.normal(12, 1, size=(60, 20))
    x = np.concatenate([a, b])
    e1 = q.tsne_embed(x, perplexity=10, seed=3)
    e2 = q.tsne_embed(x, perplexity=10, seed=3)
    np.testing.assert_array_equal(e1, e2)
    assert silhouette_score(e1, np.r_[np.zeros(60), np.ones(60)]) >= 0.5


def test_tsne_duplicates_land_together():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(40, 10))
    e = q.tsne_embed(np.concatenate([x, x]), perplexity=10, seed=0)
    spread = np.ptp(e, axis=0).max()
    assert np.abs(e[:40] - e[40:]).max() < 0.05 * spread


def test_tsne_too_few_samples():
    with pytest.raises(q.QualityError):
        q.tsne_embed(np.zeros((20, 5)), perplexity=10)


# -- correlation -------------------------------------------------------------------

def test_correlation_affine_and_diagonal():
    x = np.linspace(0, 1, 50)
    rows = np.column_stack([x, 2 * x + 1, np.sin(7 * x)])
    rep = q.correlation_with_p(rows, columns=("a", "b", "c"))
    assert rep.r[0, 0] == 1 and rep.pair("a", "b")[0] == pytest.approx(1.0)
    assert rep.pair("a", "b")[1] == pytest.approx(0.0, abs=1e-12)


def test_correlation_matches_scipy():
    rng = np.random.default_rng(4)
    rows = rng.normal(size=(40, 7))
    rows[:, 6] += 0.4 * rows[:, 4]
    rep = q.correlation_with_p(rows)
    for i in range(7):
        for j in range(i + 1, 7):
            r, p = stats.pearsonr(rows[:, i], rows[:, j])
            assert rep.r[i, j] == pytest.approx(r, abs=1e-12)
            assert rep.p[i, j] == pytest.approx(p, rel=1e-8)


def test_correlation_constant_column_flagged():
    rows = np.column_stack([np.arange(5.0), np.ones(5), np.arange(5.0) ** 2])
    rep = q.correlation_with_p(rows, columns=("a", "b", "c"))
    assert rep.degenerate == ["b"]
    assert np.isnan(rep.r[1, 0]) and np.isnan(rep.p[0, 1])
    assert rep.to_dict()["r"][0][1] is None


def test_correlation_needs_three_rows():
    with pytest.raises(q.QualityError):
        q.correlation_with_p(np.zeros((2, 3)), columns=("a", "b", "c"))


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 40), st.integers(0, 10_000))
def test_correlation_symmetric_bounded(n, seed):
    rows = np.random.default_rng(seed).normal(size=(n, 7))
    rep = q.correlation_with_p(rows)
    np.testing.assert_allclose(rep.r, rep.r.T, atol=1e-12)
    assert np.all(np.abs(rep.r) <= 1) and np.all(np.diag(rep.r) == 1)
    assert np.all((rep.p >= 0) & (rep.p <= 1))


# -- histograms --------------------------------------------------------------------

def test_histogram_mass():
    vals = np.random.default_rng(0).uniform(size=20_000)
    dens, edges = q.distribution_histogram(vals, bins=20)
    assert (dens * np.diff(edges)).sum() == pytest.approx(1.0, abs=1e-9)
    # flat within sampling noise (binomial sd ~ 0.07 per bin in density units)
    assert np.abs(dens - 1).max() < 0.3


def test_histogram_zero_spike():
    dens, edges = q.distribution_histogram(np.zeros(10), bins=10)
    assert dens[0] == pytest.approx(10.0) and not dens[1:].any()


def test_histogram_empty_and_bins():
    assert q.distribution_histogram([], bins=5)[0].size == 0
    with pytest.raises(q.QualityError):
        q.distribution_histogram([0.5], bins=1)


# -- C2ST --------------------------------------------------------------------------

def test_c2st_self_test_near_half():
    ws = gaussian_corpus(4000, seed=5)
    half = np.arange(len(ws)) % 2 == 0
    res = q.c2st(ws.subset(half), ws.subset(~half), seed=1)
    assert abs(res["accuracy_both"] - 0.5) <= 0.05


def test_c2st_constant_fakes_separable():
    ws = gaussian_corpus(600, seed=2)
    fakes = WindowSet(np.zeros_like(ws.windows), ws.labels)
    res = q.c2st(ws, fakes, seed=0)
    assert res["accuracy_both"] >= 0.95
    assert res["accuracy_stress"] >= 0.95 and res["accuracy_nonstress"] >= 0.95


def test_c2st_missing_stratum_marked():
    ws = gaussian_corpus(300, seed=2)
    synth = ws.subset(ws.labels == 0)
    res = q.c2st(ws, synth)
    assert res["accuracy_stress"] is None and res["skipped_strata"] == ["stress"]
    assert res["accuracy_nonstress"] is not None


def test_c2st_swap_symmetry_in_expectation():
    a, b = gaussian_corpus(800, seed=1), gaussian_corpus(800, seed=2)
    b.windows[:] = np.clip(b.windows + 0.03, 0, 1)
    ab = np.mean([q.c2st(a, b, seed=s)["accuracy_both"] for s in range(5)])
    ba = np.mean([q.c2st(b, a, seed=s)["accuracy_both"] for s in range(5)])
    assert abs(ab - ba) < 0.05


def test_quality_report_keys():
    rep = q.quality_report(gaussian_corpus(100, seed=1), gaussian_corpus(100, seed=2))
    assert set(rep["c2st"]) >= {"accuracy_both", "accuracy_stress", "accuracy_nonstress"}
    assert len(rep["correlation_real"]["r"]) == 7
