"""Leave-one-subject-out evaluation with real, synthetic-only (TSTR) and
augmented (AUGM) training data.

Every fold tests on one real subject's windows.  Synthetic data for a fold
comes from that fold's generator, which must not have seen the held-out
subject.  Repeats re-sample synthetic subjects and re-initialise the
classifier but reuse the generator weights.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import classifiers as clf
from . import dp
from .gan import GeneratorArtifact, TrainingFailure as GanTrainingFailure
from .gan import subjects_to_windowset, synthesize_subjects, window_digests
from .metrics import f1_accuracy
from .preprocess import WindowSet
from .spectral import featurize_windows

log = logging.getLogger(__name__)

STRATEGIES = ("original", "tstr", "augm")


class PlanError(ValueError):
    pass


class LeakageError(RuntimeError):
    pass


@dataclass
class ExperimentPlan:
    strategy: str = "original"
    generator_kind: str | None = None
    generator_epsilon: float | None = None    # recorded for reporting only
    synthetic_subjects: int = 15
    classifier: str = "cnn"
    repeats: int = 10
    seed: int = 42
    classifier_epsilon: float | None = None   # DP classifier training on real data
    classifier_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise PlanError(f"unknown strategy {self.strategy!r}")
        if self.repeats < 1:
            raise PlanError("repeats must be at least 1")
        if self.strategy != "original" and self.generator_kind is None:
            raise PlanError(f"strategy {self.strategy} needs a generator kind")
        if self.strategy != "original" and self.synthetic_subjects < 1:
            raise PlanError("need at least one synthetic subject")
        if self.strategy == "tstr" and self.classifier_epsilon is not None:
            raise PlanError("TSTR classifiers never see real data; DP applies to the generator")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def datasets(self) -> str:
        gen = self.generator_kind or ""
        return {"original": "WESAD", "tstr": gen, "augm": f"{gen}+WESAD"}[self.strategy]

    def classifier_config(self, seed: int) -> clf.ClassifierConfig:
        privacy = dp.PrivacySpec(self.classifier_epsilon) if self.classifier_epsilon is not None else None
        return clf.ClassifierConfig.defaults(self.classifier, seed=seed, privacy=privacy,
                                             **self.classifier_overrides)


@dataclass
class FoldResult:
    f1: float
    accuracy: float
    degenerate: bool = False
    failed: bool = False
    error: str | None = None


@dataclass
class LosoReport:
    plan: ExperimentPlan
    results: dict[int, list[FoldResult]]          # subject -> one entry per repeat
    fold_meta: dict[int, dict] = field(default_factory=dict)

    def per_subject_mean(self) -> dict[int, dict]:
        return {s: {"f1": float(np.mean([r.f1 for r in rs])),
                    "accuracy": float(np.mean([r.accuracy for r in rs])),
                    "failed_repeats": sum(r.failed for r in rs)}
                for s, rs in sorted(self.results.items())}

    @property
    def grand_f1(self) -> float:
        return float(np.mean([v["f1"] for v in self.per_subject_mean().values()]))

    @property
    def grand_accuracy(self) -> float:
        return float(np.mean([v["accuracy"] for v in self.per_subject_mean().values()]))

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "grand": {"f1": self.grand_f1, "accuracy": self.grand_accuracy},
            "per_subject": {str(s): v for s, v in self.per_subject_mean().items()},
            "repeats": {str(s): [asdict(r) for r in rs] for s, rs in sorted(self.results.items())},
            "folds": {str(s): m for s, m in sorted(self.fold_meta.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, out_dir) -> dict[str, Path]:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        paths = {"report": d / "loso_report.json", "per_subject": d / "per_subject.csv",
                 "grand": d / "grand_table.csv"}
        paths["report"].write_text(self.to_json())
        write_rows(paths["per_subject"], ["subject", "f1", "accuracy"], per_subject_table(self))
        write_rows(paths["grand"], list(grand_row(self)), [list(grand_row(self).values())])
        return paths


def per_subject_table(report: LosoReport) -> list[list]:
    """One row per held-out subject plus a closing average row."""
    rows = [[s, round(v["f1"], 2), round(v["accuracy"], 2)] for s, v in report.per_subject_mean().items()]
    rows.append(["average", round(report.grand_f1, 2), round(report.grand_accuracy, 2)])
    return rows


def grand_row(report: LosoReport) -> dict:
    p = report.plan
    n_synth = p.synthetic_subjects if p.strategy != "original" else 0
    n_real = len(report.results) if p.strategy != "tstr" else 0
    eps = p.generator_epsilon if p.strategy != "original" else p.classifier_epsilon
    return {"strategy": p.strategy, "datasets": p.datasets, "synthetic_subjects": n_synth,
            "real_subjects": n_real, "epsilon": "" if eps is None else eps,
            "classifier": p.classifier, "f1": round(report.grand_f1, 2),
            "accuracy": round(report.grand_accuracy, 2)}


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------


def check_leakage(held_out: int, real_train: WindowSet, test: WindowSet,
                  generator: GeneratorArtifact | None = None) -> None:
    """Raise LeakageError if the held-out subject's windows reach any training input."""
    if held_out in set(real_train.subject_ids.tolist()):
        raise LeakageError(f"subject {held_out} is in the real training data")
    test_digests = set(window_digests(test.windows))
    if test_digests & set(window_digests(real_train.windows)):
        raise LeakageError(f"test windows of subject {held_out} appear in the real training data")
    if generator is not None:
        if held_out in generator.train_subjects:
            raise LeakageError(f"generator for fold {held_out} was trained on that subject")
        if test_digests & set(generator.manifest.get("window_digests", [])):
            raise LeakageError(f"generator for fold {held_out} saw test windows")


def repeat_seed(seed: int, subject: int, repeat: int) -> int:
    return int(np.random.SeedSequence([seed, subject, repeat]).generate_state(1)[0])


def run_loso(plan: ExperimentPlan, corpus: WindowSet,
             generators: dict[int, GeneratorArtifact] | None = None,
             folds: list[int] | None = None,
             progress: Callable[[str], None] | None = None) -> LosoReport:
    subjects = sorted(set(corpus.subject_ids.tolist()))
    if folds is not None:
        missing = set(folds) - set(subjects)
        if missing:
            raise PlanError(f"fold subjects not in corpus: {sorted(missing)}")
        subjects = sorted(folds)
    generators = generators or {}
    if plan.strategy != "original":
        missing = [s for s in subjects if s not in generators]
        if missing:
            raise PlanError(f"no LOSO generator for folds {missing}")

    real_features = featurize_windows(corpus.windows)
    results: dict[int, list[FoldResult]] = {}
    meta: dict[int, dict] = {}
    for s in subjects:
        test_mask = corpus.subject_ids == s
        test, real_train = corpus.subset(test_mask), corpus.subset(~test_mask)
        gen = generators.get(s) if plan.strategy != "original" else None
        check_leakage(s, real_train, test, gen)
        meta[s] = {"n_test": int(test_mask.sum()), "leakage_check": "passed",
                   "generator_fingerprint": gen.manifest.get("data_fingerprint") if gen else None}
        if gen is not None and gen.certificate is not None:
            meta[s]["generator_certificate"] = gen.certificate.to_dict()
        results[s] = []
        for r in range(plan.repeats):
            seed = repeat_seed(plan.seed, s, r)
            results[s].append(_run_fold(plan, s, seed, gen, real_features[~test_mask], real_train.labels,
                                        real_features[test_mask], test.labels, meta[s]))
            if progress:
                progress(f"fold {s} repeat {r}: F1 {results[s][-1].f1:.2f}")
    return LosoReport(plan, results, meta)


def _run_fold(plan, subject, seed, gen, x_real, y_real, x_test, y_test, meta) -> FoldResult:
    try:
        parts_x, parts_y = [], []
        if plan.strategy in ("original", "augm"):
            parts_x.append(x_real)
            parts_y.append(y_real)
        if gen is not None:
            synth = subjects_to_windowset(synthesize_subjects(gen, plan.synthetic_subjects, seed))
            parts_x.append(featurize_windows(synth.windows))
            parts_y.append(synth.labels)
        model = clf.train(np.concatenate(parts_x), np.concatenate(parts_y), plan.classifier_config(seed))
        if model.certificate is not None:
            meta.setdefault("classifier_certificates", []).append(model.certificate.to_dict())
        preds, _ = model.predict(x_test)
    except (clf.ClassifierError, GanTrainingFailure, dp.PrivacyError, FloatingPointError) as exc:
        log.warning("fold %s failed: %s", subject, exc)
        return FoldResult(0.0, 0.0, degenerate=True, failed=True, error=str(exc))
    sc = f1_accuracy(preds, y_test)
    return FoldResult(sc.f1, sc.accuracy, sc.degenerate)
