import json
import pickle

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal

from wearsynth import ingest, preprocess as pp
from wearsynth.toydata import fake_raw_subject


@pytest.fixture
def wesad_root(tmp_path):
    for sid in (4, 2, 7):
        ingest.write_wesad_pickle(tmp_path, fake_raw_subject(sid, seed=1))
    return tmp_path


# -- ingest ------------------------------------------------------------------

def test_discover_sorted(wesad_root):
    assert ingest.discover_subjects(wesad_root).subject_ids == [2, 4, 7]


def test_discover_empty(tmp_path):
    with pytest.raises(ingest.EmptyCohortError):
        ingest.discover_subjects(tmp_path)


def test_discover_missing_root(tmp_path):
    with pytest.raises(ingest.IngestError):
        ingest.discover_subjects(tmp_path / "nope")


def test_discover_singleton(tmp_path):
    ingest.write_wesad_pickle(tmp_path, fake_raw_subject(4))
    (tmp_path / "S9").mkdir()  # no archive inside
    assert ingest.discover_subjects(tmp_path).subject_ids == [4]


def test_full_cohort_flag(tmp_path):
    c = ingest.Cohort(tmp_path, list(ingest.WESAD_SUBJECTS))
    assert c.is_full_wesad and 12 not in c.subject_ids and len(c.subject_ids) == 15


def test_load_pickle(wesad_root):
    s = ingest.load_subject(wesad_root, 4)
    assert set(s.channels) == set(ingest.CHANNELS)
    assert s.channels["BVP"][1] == 64.0 and s.channels["EDA"][1] == 4.0
    durs = [s.duration(c) for c in ingest.CHANNELS]
    assert max(durs) - min(durs) <= 1.0


def test_load_is_deterministic(wesad_root):
    a, b = ingest.load_subject(wesad_root, 2), ingest.load_subject(wesad_root, 2)
    for c in ingest.CHANNELS:
        assert a.channels[c][0].tobytes() == b.channels[c][0].tobytes()
    assert a.label_stream[0].tobytes() == b.label_stream[0].tobytes()


def test_load_absent_subject(wesad_root):
    with pytest.raises(ingest.SubjectNotFoundError):
        ingest.load_subject(wesad_root, 12)


def test_missing_eda_names_channel(wesad_root):
    path = wesad_root / "S4" / "S4.pkl"
    data = pickle.load(open(path, "rb"))
    del data["signal"]["wrist"]["EDA"]
    pickle.dump(data, open(path, "wb"))
    with pytest.raises(ingest.SchemaError, match="EDA"):
        ingest.load_subject(wesad_root, 4)


def test_corrupt_archive_names_subject(wesad_root):
    (wesad_root / "S7" / "S7.pkl").write_bytes(b"garbage")
    with pytest.raises(ingest.ArchiveParseError, match="S7"):
        ingest.load_subject(wesad_root, 7)


def test_csv_fallback_roundtrip(tmp_path):
    short = ((1, 100), (2, 80))
    raw = fake_raw_subject(3, protocol=short)
    ingest.write_csv_subject(tmp_path, raw)
    assert ingest.discover_subjects(tmp_path).subject_ids == [3]
    back = ingest.load_subject(tmp_path, 3)
    assert back.channels["ACC_x"][1] == pytest.approx(32.0)
    np.testing.assert_allclose(back.channels["EDA"][0], raw.channels["EDA"][0])
    np.testing.assert_array_equal(back.label_stream[0], raw.label_stream[0])


def test_csv_missing_channel(tmp_path):
    ingest.write_csv_subject(tmp_path, fake_raw_subject(3, protocol=((1, 70),)))
    (tmp_path / "S3" / "TEMP.csv").unlink()
    with pytest.raises(ingest.SchemaError, match="TEMP"):
        ingest.load_subject(tmp_path, 3)


# -- resampling ----------------------------------------------------------------

@pytest.mark.parametrize("n,src", [(480, 4), (481, 4), (7680, 64), (3841, 32), (130, 4)])
def test_resample_matches_scipy(n, src):
    x = np.random.default_rng(n).normal(size=n)
    np.testing.assert_allclose(pp.resample_fourier(x, src, 1), signal.resample(x, round(n / src)),
                               atol=1e-12)


@pytest.mark.parametrize("src", [4, 32, 64])
def test_resample_constant(src):
    out = pp.resample_fourier(np.full(src * 50, 3.25), src)
    assert len(out) == 50
    np.testing.assert_allclose(out, 3.25, atol=1e-12)


def test_resample_tone_keeps_frequency():
    t = np.arange(480) / 4
    out = pp.resample_fourier(np.sin(2 * np.pi * 0.1 * t), 4, 1)
    assert len(out) == 120
    # direct DFT oracle
    k = np.arange(61)
    mags = [abs(sum(out[n] * np.exp(-2j * np.pi * kk * n / 120) for n in range(120))) for kk in k]
    assert k[int(np.argmax(mags))] / 120 == pytest.approx(0.1)


def test_resample_rejects_upsampling():
    with pytest.raises(pp.PreprocessError):
        pp.resample_fourier(np.ones(10), 1, 4)


def test_label_resampling_is_modal():
    codes = np.array([1] * 400 + [2] * 300 + [2] * 700)
    np.testing.assert_array_equal(pp.resample_labels(codes, 700), [1, 2])


# -- relabel -------------------------------------------------------------------

def test_relabel_all_stress():
    y, keep, dropped = pp.relabel_binary([2, 2, 2])
    np.testing.assert_array_equal(y, [1, 1, 1])
    assert keep.all() and dropped == {}


def test_relabel_fully_filtered():
    y, keep, dropped = pp.relabel_binary([0, 4, 4, 6])
    assert len(y) == 0 and not keep.any()
    assert dropped == {0: 1, 4: 2, 6: 1}


def test_relabel_mapping():
    y, keep, _ = pp.relabel_binary([1, 3, 2, 0, 2])
    np.testing.assert_array_equal(y, [0, 0, 1, 1])
    np.testing.assert_array_equal(keep, [True, True, True, False, True])


# -- normalization ---------------------------------------------------------------

def _session(matrix, labels=None):
    matrix = np.asarray(matrix, dtype=float)
    t = len(matrix)
    labels = np.zeros(t, dtype=int) if labels is None else np.asarray(labels)
    return pp.UnifiedSession(1, matrix, labels, np.arange(t))


def test_minmax_affine():
    s = pp.normalize_minmax(_session(np.tile([[2.0], [4.0], [6.0]], (1, 6))))
    np.testing.assert_allclose(s.matrix[:, 0], [0, 0.5, 1])


def test_minmax_constant_channel_warns():
    m = np.tile([[2.0], [4.0], [6.0]], (1, 6))
    m[:, 3] = 5.0
    s = pp.normalize_minmax(_session(m))
    np.testing.assert_array_equal(s.matrix[:, 3], 0.0)
    assert any("BVP" in w for w in s.warnings)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 50), st.integers(0, 10_000))
def test_minmax_idempotent(t, seed):
    m = np.random.default_rng(seed).normal(size=(t, 6)) * 10
    once = pp.normalize_minmax(_session(m))
    twice = pp.normalize_minmax(once)
    assert once.matrix.min() >= 0 and once.matrix.max() <= 1
    np.testing.assert_allclose(twice.matrix, once.matrix, atol=1e-12)


def test_global_scope():
    a, b = _session(np.zeros((3, 6))), _session(np.full((3, 6), 2.0))
    na, nb = pp.normalize_corpus([a, b], scope="global")
    assert na.matrix.max() == 0 and nb.matrix.min() == 1


# -- windowing -------------------------------------------------------------------

def test_window_count_formula_exhaustive():
    for t in range(60, 401):
        for stride in (30, 60):
            enumerated = sum(1 for a in range(0, t) if a + 60 <= t and a % stride == 0)
            assert pp.window_count(t, stride) == enumerated
            ws = pp.slice_windows(_session(np.zeros((t, 6))), stride_s=stride)
            assert len(ws) == enumerated


def test_single_window_boundary():
    assert len(pp.slice_windows(_session(np.zeros((60, 6))), stride_s=30)) == 1


def test_short_session_gives_empty():
    assert len(pp.slice_windows(_session(np.zeros((59, 6))))) == 0


@pytest.mark.parametrize("n_stress,label", [(29, 0), (30, 1), (31, 1)])
def test_majority_label(n_stress, label):
    labels = np.zeros(90, dtype=int)
    labels[:n_stress] = 1
    ws = pp.slice_windows(_session(np.zeros((90, 6)), labels), stride_s=30)
    assert ws.labels[0] == label


def test_stride30_overlap_and_count():
    m = np.arange(300 * 6, dtype=float).reshape(300, 6)
    s = _session(m)
    w30, w60 = pp.slice_windows(s, stride_s=30), pp.slice_windows(s, stride_s=60)
    np.testing.assert_array_equal(w30.windows[0][30:], w30.windows[1][:30])
    assert 2 * len(w60) - len(w30) in (0, 1)
    assert w30.windows.shape[1:] == (60, 6)


def test_windows_never_straddle_gaps():
    s = pp.UnifiedSession(1, np.zeros((120, 6)), np.zeros(120, dtype=int),
                          np.concatenate([np.arange(70), np.arange(200, 250)]))
    ws = pp.slice_windows(s, stride_s=30)
    assert ws.starts.tolist() == [0]


def test_unify_subject_pipeline():
    raw = fake_raw_subject(4, seed=2)
    s = pp.normalize_minmax(pp.unify_subject(raw))
    assert set(np.unique(s.labels)) == {0, 1}
    # 600 baseline + 300 stress + 200 amusement seconds kept
    assert len(s) == 1100
    assert int(s.labels.sum()) == 300
    assert s.matrix.min() >= 0 and s.matrix.max() <= 1
    assert len(s.segments()) == 3


def test_session_and_window_persistence(tmp_path):
    s = pp.normalize_minmax(pp.unify_subject(fake_raw_subject(5, protocol=((1, 130), (2, 70)))))
    pp.save_session(s, tmp_path / "S5.csv")
    back = pp.load_session(tmp_path / "S5.csv", 5)
    np.testing.assert_array_equal(back.matrix, s.matrix)
    np.testing.assert_array_equal(back.second_index, s.second_index)
    ws = pp.slice_windows(s, stride_s=30)
    ws.save(tmp_path / "windows")
    again = pp.WindowSet.load(tmp_path / "windows")
    np.testing.assert_array_equal(again.windows, ws.windows)
    assert again.stride_s == 30
    header = (tmp_path / "windows.manifest.csv").read_text().splitlines()[0]
    assert header == "window_id,subject_id,start_second,label"


def test_corpus_stats_deterministic(tmp_path):
    sessions = [pp.normalize_minmax(pp.unify_subject(fake_raw_subject(i, seed=3))) for i in (2, 3)]
    st1 = pp.corpus_stats(sessions)
    pp.write_stats(st1, tmp_path / "a.json")
    pp.write_stats(pp.corpus_stats(sessions), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert st1["stress_seconds"] == 600
    assert json.loads((tmp_path / "a.json").read_text())["fold_windows_stride60"]["2"] == \
        st1["windows_stride60"]["3"]
