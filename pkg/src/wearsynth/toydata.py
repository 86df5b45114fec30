"""Constructed corpora for tests, demos and the dataset-free checks."""

from __future__ import annotations

import numpy as np

from .ingest import CHANNELS, DEFAULT_RATES, RawSubject
from .preprocess import WINDOW_S, WindowSet

# protocol phases (code, seconds) roughly shaped like a WESAD session
DEFAULT_PROTOCOL = ((0, 30), (1, 600), (0, 30), (2, 300), (0, 30), (4, 120), (3, 200), (0, 30))


def fake_raw_subject(subject_id: int, protocol=DEFAULT_PROTOCOL, seed: int = 0) -> RawSubject:
    """A synthetic wrist recording at the E4 rates with stress-dependent EDA and TEMP."""
    rng = np.random.default_rng(seed + 1000 * subject_id)
    total = sum(d for _, d in protocol)
    codes_1hz = np.concatenate([np.full(d, c) for c, d in protocol])
    stress = (codes_1hz == 2).astype(float)

    def channel(rate, base, stress_gain, noise, tone=0.0):
        n = int(total * rate)
        t = np.arange(n) / rate
        s = np.repeat(stress, int(rate))[:n]
        s = np.convolve(s, np.ones(int(rate) * 10) / (rate * 10), mode="same")
        x = base + stress_gain * s + noise * rng.normal(size=n)
        if tone:
            x += np.sin(2 * np.pi * tone * t)
        return x

    ch = {
        "ACC_x": (channel(32, 10, 0.5, 2.0), 32.0),
        "ACC_y": (channel(32, -5, 1.0, 2.0), 32.0),
        "ACC_z": (channel(32, 60, -1.0, 2.0), 32.0),
        "BVP": (channel(64, 0, 0.0, 5.0, tone=1.2), 64.0),
        "EDA": (channel(4, 1.0, 3.0, 0.05), 4.0),
        "TEMP": (channel(4, 33.0, -0.8, 0.02), 4.0),
    }
    rate = DEFAULT_RATES["label"]
    labels = np.repeat(codes_1hz, int(rate)).astype(np.int64)
    return RawSubject(subject_id, {c: ch[c] for c in CHANNELS}, (labels, rate))


def sinusoid_corpus(n: int = 200, seed: int = 0) -> WindowSet:
    """Two-class sinusoids in [0, 1]: class 1 sits higher on EDA and lower on TEMP,
    and oscillates faster."""
    rng = np.random.default_rng(seed)
    t = np.arange(WINDOW_S)
    labels = np.arange(n) % 2
    wins = np.empty((n, WINDOW_S, 6))
    for i, y in enumerate(labels):
        freq = (0.05 if y == 0 else 0.12) + 0.01 * rng.normal()
        phase = rng.uniform(0, 2 * np.pi)
        for c in range(6):
            level = 0.3 + 0.4 * y if c == 4 else (0.7 - 0.4 * y if c == 5 else 0.5)
            wins[i, :, c] = level + 0.15 * np.sin(2 * np.pi * freq * t + phase + c)
    wins += 0.02 * rng.normal(size=wins.shape)
    return WindowSet(np.clip(wins, 0, 1), labels, 60, np.zeros(n, dtype=int), np.arange(n) * 60)


def flat_eda_corpus(n: int = 64, seed: int = 0) -> WindowSet:
    """Label 0 has low flat EDA, label 1 high flat EDA; other channels are mid-level noise."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    wins = 0.5 + 0.05 * rng.normal(size=(n, WINDOW_S, 6))
    wins[:, :, 4] = np.where(labels[:, None] == 1, 0.8, 0.2) + 0.02 * rng.normal(size=(n, WINDOW_S))
    return WindowSet(np.clip(wins, 0, 1), labels, 60, np.zeros(n, dtype=int), np.arange(n) * 60)


def two_cluster_corpus(n: int = 64, seed: int = 0) -> WindowSet:
    """Label 0 windows span [0.1, 0.4] per channel, label 1 windows span [0.5, 0.9]."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    lo = np.where(labels == 1, 0.5, 0.1)[:, None, None]
    hi = np.where(labels == 1, 0.9, 0.4)[:, None, None]
    u = rng.uniform(size=(n, WINDOW_S, 6))
    u[:, 0, :], u[:, -1, :] = 0.0, 1.0  # pin each channel's range
    return WindowSet(lo + (hi - lo) * u, labels, 60, np.zeros(n, dtype=int), np.arange(n) * 60)


def separable_subjects(n_subjects: int = 15, per_subject: int = 12, seed: int = 0) -> WindowSet:
    """Subjects 1..n with 30% stress windows that are trivially separable:
    stress windows oscillate strongly on EDA, non-stress windows are flat."""
    rng = np.random.default_rng(seed)
    sets = []
    t = np.arange(WINDOW_S)
    n_stress = max(1, round(0.3 * per_subject))
    for sid in range(1, n_subjects + 1):
        labels = np.array([1] * n_stress + [0] * (per_subject - n_stress))
        wins = 0.5 + 0.01 * rng.normal(size=(per_subject, WINDOW_S, 6))
        for i, y in enumerate(labels):
            if y:
                wins[i, :, 4] = 0.5 + 0.45 * np.sin(2 * np.pi * 0.1 * t + rng.uniform(0, 6))
        sets.append(WindowSet(np.clip(wins, 0, 1), labels, 60, np.full(per_subject, sid),
                              np.arange(per_subject) * 60))
    return WindowSet.concat(sets)


def gaussian_corpus(n: int = 2000, seed: int = 0) -> WindowSet:
    """i.i.d. Gaussian windows clipped to [0, 1] with random labels."""
    rng = np.random.default_rng(seed)
    wins = np.clip(0.5 + 0.15 * rng.normal(size=(n, WINDOW_S, 6)), 0, 1)
    labels = (rng.uniform(size=n) < 0.3).astype(int)
    return WindowSet(wins, labels, 60, np.zeros(n, dtype=int), np.arange(n) * 60)
