"""Averaged subwindow magnitude spectra for classifier inputs.

Each signal is cut into overlapping subwindows whose length depends on the
signal's frequency range (ACC 7 s, BVP/EDA 30 s, TEMP 35 s), every subwindow
gets a one-sided FFT magnitude spectrum, spectra are zero-extended to 210
bins and averaged over the window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .ingest import CHANNELS

N_BINS = 210


@dataclass(frozen=True)
class PlanEntry:
    subwindow_s: float
    freq_range_hz: float
    slide_s: float = 0.25
    bins: int = N_BINS


DEFAULT_PLAN = {
    "ACC_x": PlanEntry(7, 30),
    "ACC_y": PlanEntry(7, 30),
    "ACC_z": PlanEntry(7, 30),
    "BVP": PlanEntry(30, 7),
    "EDA": PlanEntry(30, 7),
    "TEMP": PlanEntry(35, 6),
}


class PlanError(KeyError):
    pass


@dataclass
class SpectralFeatures:
    matrix: np.ndarray      # (6, 210)
    label: int = -1
    window_id: int = -1


def plan_to_json(plan=DEFAULT_PLAN) -> str:
    rows = {k: {"subwindow_s": v.subwindow_s, "frequency_range_hz": v.freq_range_hz,
                "slide_s": v.slide_s, "inputs": v.bins} for k, v in plan.items()}
    return json.dumps(rows, indent=2)


def subwindow_stride(entry: PlanEntry, rate_hz: float = 1.0) -> int:
    # sub-sample slides floor to one sample
    return max(1, int(round(entry.slide_s * rate_hz)))


def subwindow_count(n: int, length: int, stride: int) -> int:
    return 0 if n < length else (n - length) // stride + 1


def subwindow_spectra(channel, entry: PlanEntry, rate_hz: float = 1.0,
                      pad: str = "frequency") -> np.ndarray:
    """One padded magnitude spectrum per subwindow, shape (count, bins).

    ``pad="frequency"`` appends zero bins after the one-sided spectrum;
    ``pad="time"`` zero-pads each subwindow in time before the FFT so that it
    yields ``bins`` one-sided bins directly.
    """
    if entry is None:
        raise PlanError("no plan entry for signal")
    x = np.asarray(channel, dtype=np.float64)
    length = int(round(entry.subwindow_s * rate_hz))
    if length > len(x) or length < 1:
        raise ValueError(f"subwindow of {length} samples does not fit a {len(x)}-sample channel")
    stride = subwindow_stride(entry, rate_hz)
    starts = np.arange(subwindow_count(len(x), length, stride)) * stride
    frames = np.stack([x[s:s + length] for s in starts])
    if pad == "time":
        n_fft = max(length, 2 * (entry.bins - 1))
        mags = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))[:, : entry.bins]
    elif pad == "frequency":
        mags = np.abs(np.fft.rfft(frames, axis=1))[:, : entry.bins]
    else:
        raise ValueError(f"unknown padding mode {pad!r}")
    out = np.zeros((len(frames), entry.bins))
    out[:, : mags.shape[1]] = mags
    return out


def average_spectrum(spectra) -> np.ndarray:
    spectra = np.asarray(spectra, dtype=np.float64)
    if spectra.ndim != 2 or len(spectra) == 0:
        raise ValueError("need a non-empty list of spectra")
    return spectra.mean(axis=0)


def featurize(window, plan=DEFAULT_PLAN, rate_hz: float = 1.0, pad: str = "frequency",
              label: int = -1, window_id: int = -1) -> SpectralFeatures:
    window = np.asarray(window, dtype=np.float64)
    rows = []
    for j, name in enumerate(CHANNELS):
        if name not in plan:
            raise PlanError(f"plan has no entry for {name}")
        rows.append(average_spectrum(subwindow_spectra(window[:, j], plan[name], rate_hz, pad)))
    return SpectralFeatures(np.stack(rows), label, window_id)


def featurize_windows(windows, plan=DEFAULT_PLAN, rate_hz: float = 1.0, pad: str = "frequency") -> np.ndarray:
    """Vectorised featurize over (N, 60, 6) windows, returns (N, 6, 210)."""
    windows = np.asarray(windows, dtype=np.float64)
    n = len(windows)
    out = np.zeros((n, len(CHANNELS), N_BINS))
    if n == 0:
        return out
    for j, name in enumerate(CHANNELS):
        entry = plan[name]
        length = int(round(entry.subwindow_s * rate_hz))
        stride = subwindow_stride(entry, rate_hz)
        count = subwindow_count(windows.shape[1], length, stride)
        idx = (np.arange(count) * stride)[:, None] + np.arange(length)[None, :]
        frames = windows[:, :, j][:, idx]                      # (N, count, length)
        if pad == "time":
            mags = np.abs(np.fft.rfft(frames, n=max(length, 2 * (entry.bins - 1)), axis=2))
        else:
            mags = np.abs(np.fft.rfft(frames, axis=2))
        mags = mags[:, :, : entry.bins].mean(axis=1)
        out[:, j, : mags.shape[1]] = mags
    return out


def signal_power(features) -> np.ndarray:
    """Sum of squared bins per signal."""
    m = features.matrix if isinstance(features, SpectralFeatures) else np.asarray(features)
    return (m ** 2).sum(axis=-1)


def percentage_change(a, b):
    """|a - b| relative to their mean, in percent (symmetric in a and b)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    mean = (a + b) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(mean == 0, 0.0, np.abs(a - b) / mean * 100.0)


def power_change_by_label(powers, labels) -> dict:
    """Average percentage change of mean spectral power between stress and non-stress."""
    powers, labels = np.asarray(powers), np.asarray(labels)
    stress, calm = powers[labels == 1].mean(axis=0), powers[labels == 0].mean(axis=0)
    per_signal = percentage_change(stress, calm)
    return {
        "per_signal": dict(zip(CHANNELS, per_signal.tolist())),
        "higher_under_stress": dict(zip(CHANNELS, (stress > calm).tolist())),
        "overall": float(percentage_change(stress.sum(), calm.sum())),
    }


def all_combinations(names=CHANNELS) -> list[tuple[str, ...]]:
    return [c for r in range(1, len(names) + 1) for c in combinations(names, r)]
