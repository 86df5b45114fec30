"""Turning raw wrist recordings into labeled 60 s windows.

Steps: Fourier resampling to 1 Hz, binary relabeling (baseline and amusement
become non-stress, stress stays, everything else is dropped), per-channel
min-max scaling, and windowing with a 60 s or 30 s stride.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import CHANNELS, RawSubject

log = logging.getLogger(__name__)

BASELINE, STRESS, AMUSEMENT = 1, 2, 3
WINDOW_S = 60
N_CHANNELS = len(CHANNELS)


class PreprocessError(ValueError):
    pass


@dataclass
class UnifiedSession:
    """1 Hz, six-channel session with binary labels.

    ``second_index`` keeps the original second of every retained row so that
    gaps left by dropped protocol phases remain visible.
    """
    subject_id: int
    matrix: np.ndarray          # (T, 6)
    labels: np.ndarray          # (T,) in {0, 1}
    second_index: np.ndarray    # (T,) strictly increasing
    warnings: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    def segments(self) -> list[slice]:
        """Contiguous runs of seconds (no gap in ``second_index``)."""
        if len(self) == 0:
            return []
        breaks = np.flatnonzero(np.diff(self.second_index) != 1) + 1
        edges = [0, *breaks.tolist(), len(self)]
        return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


@dataclass
class WindowSet:
    windows: np.ndarray                 # (N, 60, 6)
    labels: np.ndarray                  # (N,)
    stride_s: int = 60
    subject_ids: np.ndarray = None      # (N,) provenance per window
    starts: np.ndarray = None           # (N,) start second per window

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float64).reshape(-1, WINDOW_S, N_CHANNELS)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        n = len(self.labels)
        if len(self.windows) != n:
            raise PreprocessError("windows and labels differ in length")
        self.subject_ids = (np.full(n, -1, dtype=np.int64) if self.subject_ids is None
                            else np.asarray(self.subject_ids, dtype=np.int64))
        self.starts = (np.zeros(n, dtype=np.int64) if self.starts is None
                       else np.asarray(self.starts, dtype=np.int64))

    def __len__(self):
        return len(self.labels)

    @property
    def provenance(self) -> list[int]:
        return sorted(set(self.subject_ids.tolist()))

    def subset(self, mask) -> "WindowSet":
        return WindowSet(self.windows[mask], self.labels[mask], self.stride_s,
                         self.subject_ids[mask], self.starts[mask])

    def for_subjects(self, ids) -> "WindowSet":
        return self.subset(np.isin(self.subject_ids, list(ids)))

    @classmethod
    def concat(cls, sets: list["WindowSet"]) -> "WindowSet":
        sets = [s for s in sets if s is not None]
        if not sets:
            return cls(np.empty((0, WINDOW_S, N_CHANNELS)), np.empty(0))
        return cls(np.concatenate([s.windows for s in sets]),
                   np.concatenate([s.labels for s in sets]),
                   sets[0].stride_s,
                   np.concatenate([s.subject_ids for s in sets]),
                   np.concatenate([s.starts for s in sets]))

    def save(self, path) -> None:
        """Write ``<path>.npz`` plus a CSV manifest (window id, subject, start, label)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(path.with_suffix(".npz"), windows=self.windows, labels=self.labels,
                            subject_ids=self.subject_ids, starts=self.starts,
                            stride_s=np.array(self.stride_s))
        with open(path.with_suffix(".manifest.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window_id", "subject_id", "start_second", "label"])
            for i, (s, t, y) in enumerate(zip(self.subject_ids, self.starts, self.labels)):
                w.writerow([i, int(s), int(t), int(y)])

    @classmethod
    def load(cls, path) -> "WindowSet":
        with np.load(Path(path).with_suffix(".npz")) as z:
            return cls(z["windows"], z["labels"], int(z["stride_s"]), z["subject_ids"], z["starts"])


# ---------------------------------------------------------------------------


def resample_fourier(signal, src_hz: float, dst_hz: float = 1.0) -> np.ndarray:
    """Band-limited downsampling by truncating the discrete spectrum."""
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        raise PreprocessError("cannot resample an empty signal")
    if src_hz < dst_hz or dst_hz <= 0:
        raise PreprocessError(f"upsampling from {src_hz} Hz to {dst_hz} Hz is not supported")
    n = len(x)
    m = int(round(n * dst_hz / src_hz))
    if m == n:
        return x.copy()
    if m == 0:
        raise PreprocessError("signal too short for the target rate")
    spec = np.fft.rfft(x)
    kept = spec[: m // 2 + 1].copy()
    if m % 2 == 0:
        # the new Nyquist bin stands for both +/- frequencies of the old spectrum
        kept[-1] = kept[-1] * 2.0
    return np.fft.irfft(kept, m) * (m / n)


def resample_labels(labels, src_hz: float, dst_hz: float = 1.0) -> np.ndarray:
    """Most frequent code per output bucket (ties go to the smaller code)."""
    labels = np.asarray(labels, dtype=np.int64)
    per = src_hz / dst_hz
    m = int(np.floor(len(labels) / per + 1e-9))
    out = np.empty(m, dtype=np.int64)
    for i in range(m):
        chunk = labels[int(round(i * per)): int(round((i + 1) * per))]
        out[i] = np.bincount(chunk).argmax()
    return out


def relabel_binary(label_stream_1hz) -> tuple[np.ndarray, np.ndarray, dict[int, int]]:
    """Map baseline/amusement to 0 and stress to 1.

    Returns (binary labels of the kept rows, keep mask, counts of masked codes).
    """
    codes = np.asarray(label_stream_1hz, dtype=np.int64)
    keep = np.isin(codes, [BASELINE, STRESS, AMUSEMENT])
    binary = (codes[keep] == STRESS).astype(np.int64)
    dropped = dict(sorted(Counter(codes[~keep].tolist()).items()))
    return binary, keep, dropped


def unify_subject(raw: RawSubject, dst_hz: float = 1.0) -> UnifiedSession:
    """Resample every channel to ``dst_hz``, align lengths and relabel."""
    cols = [resample_fourier(raw.channels[c][0], raw.channels[c][1], dst_hz) for c in CHANNELS]
    codes = resample_labels(*raw.label_stream, dst_hz)
    t = min(min(len(c) for c in cols), len(codes))
    matrix = np.stack([c[:t] for c in cols], axis=1)
    binary, keep, dropped = relabel_binary(codes[:t])
    session = UnifiedSession(raw.subject_id, matrix[keep], binary, np.flatnonzero(keep))
    if dropped:
        session.warnings.append(f"masked codes {dropped}")
    return session


def _minmax(matrix, lo, hi, warnings, who):
    out = np.zeros_like(matrix)
    for j in range(matrix.shape[1]):
        rng = hi[j] - lo[j]
        if rng > 0:
            out[:, j] = (matrix[:, j] - lo[j]) / rng
        else:
            warnings.append(f"{who}: channel {CHANNELS[j]} has zero range; set to 0")
    return np.clip(out, 0.0, 1.0)


def normalize_minmax(session: UnifiedSession) -> UnifiedSession:
    """Per-channel min-max scaling of a single subject into [0, 1]."""
    warnings = list(session.warnings)
    if len(session) == 0:
        return UnifiedSession(session.subject_id, session.matrix.copy(), session.labels.copy(),
                              session.second_index.copy(), warnings)
    lo, hi = session.matrix.min(axis=0), session.matrix.max(axis=0)
    matrix = _minmax(session.matrix, lo, hi, warnings, f"S{session.subject_id}")
    for w in warnings[len(session.warnings):]:
        log.warning(w)
    return UnifiedSession(session.subject_id, matrix, session.labels.copy(),
                          session.second_index.copy(), warnings)


def normalize_corpus(sessions: list[UnifiedSession], scope: str = "subject") -> list[UnifiedSession]:
    """Normalize every session, either per subject or with corpus-wide statistics."""
    if scope == "subject":
        return [normalize_minmax(s) for s in sessions]
    if scope != "global":
        raise PreprocessError(f"unknown normalization scope {scope!r}")
    stacked = np.concatenate([s.matrix for s in sessions if len(s)])
    lo, hi = stacked.min(axis=0), stacked.max(axis=0)
    out = []
    for s in sessions:
        warnings = list(s.warnings)
        out.append(UnifiedSession(s.subject_id, _minmax(s.matrix, lo, hi, warnings, "corpus"),
                                  s.labels.copy(), s.second_index.copy(), warnings))
    return out


def window_count(length: int, stride: int, window: int = WINDOW_S) -> int:
    return 0 if length < window else (length - window) // stride + 1


def majority_label(labels) -> int:
    """Stress wins ties."""
    labels = np.asarray(labels)
    return int(2 * labels.sum() >= len(labels))


def slice_windows(session: UnifiedSession, window_s: int = WINDOW_S, stride_s: int = 60) -> WindowSet:
    """Cut each contiguous segment into windows; incomplete tails are dropped."""
    if stride_s not in (30, 60):
        raise PreprocessError("stride must be 30 or 60 seconds")
    if window_s != WINDOW_S:
        raise PreprocessError("windows are fixed at 60 s")
    wins, labels, starts = [], [], []
    for seg in session.segments():
        mat, lab, sec = session.matrix[seg], session.labels[seg], session.second_index[seg]
        for k in range(window_count(len(lab), stride_s, window_s)):
            a = k * stride_s
            wins.append(mat[a:a + window_s])
            labels.append(majority_label(lab[a:a + window_s]))
            starts.append(sec[a])
    if not wins:
        log.warning("S%s: session shorter than %d s, no windows", session.subject_id, window_s)
    ws = WindowSet(np.array(wins).reshape(-1, window_s, N_CHANNELS), labels, stride_s,
                   np.full(len(labels), session.subject_id), starts)
    return ws


# ---------------------------------------------------------------------------
# persistence

SESSION_COLUMNS = ["second_index", "acc_x", "acc_y", "acc_z", "bvp", "eda", "temp", "label"]


def save_session(session: UnifiedSession, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SESSION_COLUMNS)
        for sec, row, y in zip(session.second_index, session.matrix, session.labels):
            w.writerow([int(sec), *[repr(float(v)) for v in row], int(y)])


def load_session(path, subject_id: int) -> UnifiedSession:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return UnifiedSession(subject_id, rows[:, 1:7], rows[:, 7].astype(np.int64),
                          rows[:, 0].astype(np.int64))


def corpus_stats(sessions: list[UnifiedSession]) -> dict:
    """Second counts and per-fold (leave-one-out) window counts."""
    w60 = {s.subject_id: len(slice_windows(s, stride_s=60)) for s in sessions}
    w30 = {s.subject_id: len(slice_windows(s, stride_s=30)) for s in sessions}
    t60, t30 = sum(w60.values()), sum(w30.values())
    return {
        "non_stress_seconds": int(sum(int((s.labels == 0).sum()) for s in sessions)),
        "stress_seconds": int(sum(int(s.labels.sum()) for s in sessions)),
        "subjects": [s.subject_id for s in sessions],
        "windows_stride60": {str(k): v for k, v in w60.items()},
        "windows_stride30": {str(k): v for k, v in w30.items()},
        "fold_windows_stride60": {str(k): t60 - v for k, v in w60.items()},
        "fold_windows_stride30": {str(k): t30 - v for k, v in w30.items()},
        "warnings": {str(s.subject_id): s.warnings for s in sessions if s.warnings},
    }


def write_stats(stats: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
