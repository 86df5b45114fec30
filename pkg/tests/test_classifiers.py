import numpy as np
import pytest
import torch
from sklearn.linear_model import LogisticRegression

from wearsynth import classifiers as C
from wearsynth import dp
from wearsynth.spectral import SpectralFeatures, featurize_windows
from wearsynth.toydata import separable_subjects

torch.set_num_threads(1)


def separable(n=80, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.normal(size=(n, 6, 210))
    x[y == 1] += 10.0
    return x, y


def test_defaults():
    assert C.ClassifierConfig.defaults("tsct").epochs == 110
    assert C.ClassifierConfig.defaults("cnn").epochs == 10
    cl = C.ClassifierConfig.defaults("cnn_lstm")
    assert (cl.epochs, cl.batch, cl.learning_rate, cl.class_weighting) == (20, 50, 1e-3, True)
    with pytest.raises(C.ClassifierError):
        C.ClassifierConfig.defaults("svm")


def test_class_weight_ratio():
    w = C.class_weights(np.r_[np.zeros(70, int), np.ones(30, int)])
    assert w[1] / w[0] == pytest.approx(70 / 30)
    with pytest.raises(C.ClassifierError):
        C.class_weights(np.zeros(5, int))


@pytest.mark.parametrize("kind", ["cnn", "cnn_lstm", "tsct", "logreg"])
def test_separable_toy(kind):
    x, y = separable()
    # a linear probe confirms the construction is separable at all
    probe = LogisticRegression(max_iter=500).fit(x.reshape(len(x), -1), y)
    assert probe.score(x.reshape(len(x), -1), y) >= 0.99
    m = C.train(x, y, C.ClassifierConfig.defaults(kind, epochs=3, batch=20))
    labels, prob = m.predict(x)
    assert (labels == y).mean() >= 0.99
    assert np.all((prob >= 0) & (prob <= 1))


def test_predict_deterministic_and_shape_checked():
    x, y = separable(40)
    m = C.train(x, y, C.ClassifierConfig.defaults("tsct", epochs=2))
    a, b = m.predict(x), m.predict(x)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    with pytest.raises(C.ClassifierError):
        m.predict(np.zeros((3, 6, 200)))


def test_training_is_seeded():
    x, y = separable(40)
    cfg = C.ClassifierConfig.defaults("cnn", epochs=1, batch=10)
    p1 = C.train(x, y, cfg).predict(x)[1]
    p2 = C.train(x, y, cfg).predict(x)[1]
    np.testing.assert_array_equal(p1, p2)


def test_untrained_zero_input_stable():
    cfg = C.ClassifierConfig.defaults("cnn")
    out = [C.logits_to_labels(C.build_network(cfg)(torch.zeros(2, 6, 210)).detach().numpy())
           for _ in range(2)]
    np.testing.assert_array_equal(out[0], out[1])


def test_tie_goes_to_stress():
    assert C.logits_to_labels(np.array([[0.3, 0.3], [1.0, 0.0]])).tolist() == [1, 0]


def test_single_class_rejected():
    x, _ = separable(10)
    with pytest.raises(C.ClassifierError):
        C.train(x, np.zeros(10, int), C.ClassifierConfig.defaults("cnn", epochs=1))


def test_accepts_spectral_feature_objects():
    x, y = separable(20)
    feats = [SpectralFeatures(m) for m in x]
    m = C.train(feats, y, C.ClassifierConfig.defaults("logreg"))
    assert m.predict(feats)[0].shape == (20,)


def test_dp_training_carries_certificate(tmp_path):
    x, y = separable(40)
    cfg = C.ClassifierConfig.defaults("tsct", epochs=2, batch=10, privacy=dp.PrivacySpec(10.0))
    m = C.train(x, y, cfg)
    assert m.certificate is not None and m.certificate.epsilon <= 10.0
    assert m.manifest["optimizer_steps"] == m.certificate.steps == 8
    assert m.certificate.q == pytest.approx(10 / 40)
    m.save(tmp_path / "clf")
    back = C.FittedClassifier.load(tmp_path / "clf")
    np.testing.assert_array_equal(back.predict(x)[1], m.predict(x)[1])


def test_non_dp_has_no_certificate():
    x, y = separable(20)
    m = C.train(x, y, C.ClassifierConfig.defaults("tsct", epochs=1))
    assert m.certificate is None and m.validate_certificate() is None


def test_logreg_rejects_privacy():
    with pytest.raises(C.ClassifierError):
        C.ClassifierConfig.defaults("logreg", privacy=dp.PrivacySpec(1.0))


# -- baseline ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def powers():
    ws = separable_subjects(6, 10)
    return C.signal_powers(featurize_windows(ws.windows)), ws.labels, ws.subject_ids


def test_baseline_eda_separates(powers):
    p, y, s = powers
    res = C.lr_baseline(p, y, s, ("EDA",))
    assert res["f1"] == pytest.approx(100.0)
    assert set(res["per_subject"]) == set(np.unique(s).tolist())
    assert list(res["coefficients"]) == ["EDA"]


def test_baseline_empty_combo(powers):
    with pytest.raises(C.ClassifierError):
        C.lr_baseline(*powers, ())


def test_sweep(powers):
    rows = C.sweep_combinations(*powers)
    assert len(rows) == 63
    best = max(rows, key=lambda r: r["f1"])
    assert "EDA" in best["combo"]
    again = C.sweep_combinations(*powers)
    assert [r["f1"] for r in rows] == [r["f1"] for r in again]


def test_baseline_flags_constant_feature(powers):
    p, y, s = powers
    p = p.copy()
    p[:, 0] = 1.0
    res = C.lr_baseline(p, y, s, ("ACC_x", "EDA"))
    assert any("constant" in f for f in res["flags"])
