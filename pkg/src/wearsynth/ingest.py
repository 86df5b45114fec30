"""Reading WESAD-style subject archives.

Two layouts are understood, both one directory per subject named ``S<id>``:

* the WESAD distribution: ``S<id>/S<id>.pkl`` holding a dict with
  ``signal -> wrist -> {ACC, BVP, EDA, TEMP}`` and a 700 Hz ``label`` array;
* a plain CSV fallback: ``S<id>/<CHANNEL>.csv`` with header
  ``timestamp_s,value`` for each wrist channel, plus ``labels.csv``.
"""

from __future__ import annotations

import csv
import logging
import pickle
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CHANNELS = ("ACC_x", "ACC_y", "ACC_z", "BVP", "EDA", "TEMP")

# Empatica E4 wrist rates; labels come from the 700 Hz chest unit.
DEFAULT_RATES = {"ACC": 32.0, "BVP": 64.0, "EDA": 4.0, "TEMP": 4.0, "label": 700.0}

WESAD_SUBJECTS = (2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 14, 15, 16, 17)

# baseline, stress, amusement, meditation, transient and the unused 5-7
LABEL_CODES = frozenset(range(8))

_SUBJECT_DIR = re.compile(r"^S(\d+)$")


class IngestError(Exception):
    pass


class EmptyCohortError(IngestError):
    pass


class SubjectNotFoundError(IngestError, KeyError):
    pass


class ArchiveParseError(IngestError):
    def __init__(self, subject_id, reason):
        super().__init__(f"subject S{subject_id}: {reason}")
        self.subject_id = subject_id


class SchemaError(IngestError):
    def __init__(self, subject_id, missing):
        super().__init__(f"subject S{subject_id}: missing channels {', '.join(missing)}")
        self.subject_id = subject_id
        self.missing = list(missing)


@dataclass
class RawSubject:
    subject_id: int
    channels: dict[str, tuple[np.ndarray, float]]
    label_stream: tuple[np.ndarray, float]

    def duration(self, name: str) -> float:
        samples, rate = self.channels[name]
        return len(samples) / rate

    def validate(self) -> None:
        missing = [c for c in CHANNELS if c not in self.channels]
        if missing:
            raise SchemaError(self.subject_id, missing)
        for c in CHANNELS:
            if len(self.channels[c][0]) == 0:
                raise SchemaError(self.subject_id, [c])
        durations = [self.duration(c) for c in CHANNELS]
        if max(durations) - min(durations) > 1.0:
            raise ArchiveParseError(self.subject_id,
                                    f"channel durations disagree: {dict(zip(CHANNELS, durations))}")
        labels = self.label_stream[0]
        bad = set(np.unique(labels).tolist()) - LABEL_CODES
        if bad:
            raise ArchiveParseError(self.subject_id, f"unknown label codes {sorted(bad)}")


@dataclass
class Cohort:
    root: Path
    subject_ids: list[int] = field(default_factory=list)

    @property
    def is_full_wesad(self) -> bool:
        return tuple(self.subject_ids) == WESAD_SUBJECTS


def _archive_kind(subject_dir: Path, sid: int) -> str | None:
    if (subject_dir / f"S{sid}.pkl").is_file():
        return "pkl"
    if (subject_dir / "labels.csv").is_file():
        return "csv"
    return None


def discover_subjects(root) -> Cohort:
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"cannot read dataset root {root}")
    ids = []
    for entry in root.iterdir():
        m = _SUBJECT_DIR.match(entry.name)
        if m and entry.is_dir() and _archive_kind(entry, int(m.group(1))):
            ids.append(int(m.group(1)))
    if not ids:
        raise EmptyCohortError(f"no subject archives under {root}")
    return Cohort(root, sorted(ids))


def _read_pickle(path: Path, sid: int, rates: dict) -> RawSubject:
    try:
        with open(path, "rb") as fh:
            data = pickle.load(fh, encoding="latin1")
        wrist = data["signal"]["wrist"]
        labels = np.asarray(data["label"]).ravel().astype(np.int64)
    except Exception as exc:  # corrupt pickle, wrong structure
        raise ArchiveParseError(sid, f"unreadable archive {path.name}: {exc}") from exc

    channels = {}
    missing = []
    if "ACC" in wrist:
        acc = np.asarray(wrist["ACC"], dtype=np.float64).reshape(-1, 3)
        for i, axis in enumerate("xyz"):
            channels[f"ACC_{axis}"] = (acc[:, i].copy(), rates["ACC"])
    else:
        missing += ["ACC_x", "ACC_y", "ACC_z"]
    for name in ("BVP", "EDA", "TEMP"):
        if name in wrist:
            channels[name] = (np.asarray(wrist[name], dtype=np.float64).ravel(), rates[name])
        else:
            missing.append(name)
    if missing:
        raise SchemaError(sid, missing)
    return RawSubject(sid, channels, (labels, rates["label"]))


def _read_csv_column(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["timestamp_s", "value"]:
            raise ValueError(f"bad header {header}")
        rows = np.array([[float(a), float(b)] for a, b in reader], dtype=np.float64)
    if rows.size == 0:
        return np.empty(0), np.empty(0)
    return rows[:, 0], rows[:, 1]


def _rate_from_timestamps(ts: np.ndarray, fallback: float) -> float:
    if len(ts) < 2:
        return fallback
    return float(round(1.0 / np.median(np.diff(ts)), 6))


def _read_csv_dir(subject_dir: Path, sid: int, rates: dict) -> RawSubject:
    missing = [c for c in CHANNELS if not (subject_dir / f"{c}.csv").is_file()]
    if missing:
        raise SchemaError(sid, missing)
    channels = {}
    try:
        for c in CHANNELS:
            ts, vals = _read_csv_column(subject_dir / f"{c}.csv")
            default = rates[c.split("_")[0]]
            channels[c] = (vals, _rate_from_timestamps(ts, default))
        ts, labels = _read_csv_column(subject_dir / "labels.csv")
    except (ValueError, StopIteration) as exc:
        raise ArchiveParseError(sid, f"malformed CSV: {exc}") from exc
    return RawSubject(sid, channels, (labels.astype(np.int64), _rate_from_timestamps(ts, rates["label"])))


_READERS = {"pkl": _read_pickle, "csv": _read_csv_dir}


def load_subject(root, subject_id: int, rates: dict | None = None) -> RawSubject:
    """Load the six wrist channels and the label stream of one subject."""
    root = Path(root)
    rates = {**DEFAULT_RATES, **(rates or {})}
    subject_dir = root / f"S{subject_id}"
    kind = _archive_kind(subject_dir, subject_id) if subject_dir.is_dir() else None
    if kind is None:
        raise SubjectNotFoundError(f"subject S{subject_id} not found under {root}")
    target = subject_dir / f"S{subject_id}.pkl" if kind == "pkl" else subject_dir
    subject = _READERS[kind](target, subject_id, rates)
    subject.validate()
    log.debug("loaded S%d (%.0f s)", subject_id, subject.duration("EDA"))
    return subject


def write_csv_subject(root, subject: RawSubject) -> Path:
    """Write ``subject`` in the CSV fallback layout (used for fixtures and export)."""
    d = Path(root) / f"S{subject.subject_id}"
    d.mkdir(parents=True, exist_ok=True)
    items = [(c, *subject.channels[c]) for c in CHANNELS] + [("labels", *subject.label_stream)]
    for name, vals, rate in items:
        ts = np.arange(len(vals)) / rate
        with open(d / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp_s", "value"])
            for t, v in zip(ts, vals):
                w.writerow([repr(float(t)), repr(v.item() if hasattr(v, "item") else v)])
    return d


def write_wesad_pickle(root, subject: RawSubject) -> Path:
    """Write ``subject`` in the WESAD pickle layout."""
    d = Path(root) / f"S{subject.subject_id}"
    d.mkdir(parents=True, exist_ok=True)
    ch = subject.channels
    acc = np.stack([ch["ACC_x"][0], ch["ACC_y"][0], ch["ACC_z"][0]], axis=1)
    data = {
        "subject": f"S{subject.subject_id}",
        "signal": {"wrist": {"ACC": acc, "BVP": ch["BVP"][0][:, None],
                             "EDA": ch["EDA"][0][:, None], "TEMP": ch["TEMP"][0][:, None]}},
        "label": subject.label_stream[0],
    }
    path = d / f"S{subject.subject_id}.pkl"
    with open(path, "wb") as fh:
        pickle.dump(data, fh)
    return path
