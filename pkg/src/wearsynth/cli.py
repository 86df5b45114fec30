"""Command line entry point.

    wearsynth preprocess --root WESAD --out data/
    wearsynth train-gan  --root data/ --out gens/ --kind dp_cgan --epsilon 1 --fold all
    wearsynth generate   --artifact gens/fold_S14 --count 15 --out synth/
    wearsynth quality    --root data/ --artifact gens/fold_S14 --out quality/
    wearsynth loso       --root data/ --out loso/ --strategy augm --kind cgan --generators gens/
    wearsynth baseline   --root data/ --out baseline/

Settings are layered: built-in defaults, then a flat ``key=value`` config
file with dotted keys (``cgan.epochs=1600``, ``classifier.epochs=5``), then
flags.  Exit codes: 0 success, 2 usage, 3 data error, 4 training failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import classifiers as clf
from . import dp, gan, ingest, loso, plots, quality
from . import preprocess as pp
from .spectral import featurize_windows, power_change_by_label, signal_power

log = logging.getLogger("wearsynth")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 2, 3, 4
DEFAULT_SEED = 42
RUN_MANIFEST = "run_manifest.json"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# config


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path) -> dict:
    """Flat ``dotted.key = value`` lines; ``#`` starts a comment."""
    out = {}
    if path is None:
        return out
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file {p} does not exist")
    for n, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{p}:{n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = parse_value(value)
    return out


def section(config: dict, prefix: str) -> dict:
    pre = prefix + "."
    return {k[len(pre):]: v for k, v in config.items() if k.startswith(pre)}


# ---------------------------------------------------------------------------
# run manifest


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: dict = field(default_factory=dict)      # name -> content fingerprint
    outputs: list = field(default_factory=list)
    versions: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)      # kept apart so the rest is reproducible

    def __post_init__(self):
        if not self.versions:
            import sklearn
            import torch
            self.versions = {"wearsynth": __version__, "python": platform.python_version(),
                             "numpy": np.__version__, "torch": torch.__version__,
                             "scikit-learn": sklearn.__version__}
        self.timing.setdefault("started", time.time())

    def finish(self, outputs) -> dict:
        self.outputs = sorted(str(o) for o in outputs)
        self.timing["finished"] = time.time()
        self.timing["wall_s"] = self.timing["finished"] - self.timing["started"]
        return asdict(self)

    def write(self, directory, outputs) -> Path:
        path = Path(directory) / RUN_MANIFEST
        data = self.finish(list(outputs) + [path])
        path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")
        return path


def reproducible_part(manifest: dict) -> dict:
    return {k: v for k, v in manifest.items() if k != "timing"}


# ---------------------------------------------------------------------------
# corpus on disk


def parse_subjects(text) -> list[int] | None:
    if text in (None, "", "all"):
        return None
    try:
        return [int(s.strip().lstrip("Ss")) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"cannot parse subject list {text!r}") from None


def windows_path(root, stride: int) -> Path:
    return Path(root) / f"windows_stride{stride}"


def load_windows(root, stride: int) -> pp.WindowSet:
    p = windows_path(root, stride)
    if not p.with_suffix(".npz").exists():
        raise DataError(f"{p.with_suffix('.npz')} not found; run `wearsynth preprocess --root <WESAD> "
                        f"--out {root}` first")
    return pp.WindowSet.load(p)


def load_artifact(path) -> gan.GeneratorArtifact:
    p = Path(path)
    if not (p / "manifest.json").exists():
        raise DataError(f"no generator artifact in {p}; run `wearsynth train-gan` first")
    return gan.GeneratorArtifact.load(p)


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(args, config) -> list[Path]:
    if not args.root:
        raise UsageError("preprocess needs --root pointing at the WESAD directory")
    out = Path(args.out)
    cohort = ingest.discover_subjects(args.root)
    wanted = parse_subjects(args.subjects) or cohort.subject_ids
    missing = sorted(set(wanted) - set(cohort.subject_ids))
    if missing:
        raise ingest.SubjectNotFoundError(f"subjects {missing} not under {args.root}")
    scope = section(config, "preprocess").get("normalize", "subject")
    sessions = [pp.unify_subject(ingest.load_subject(args.root, sid)) for sid in wanted]
    sessions = pp.normalize_corpus(sessions, scope)
    written = []
    for s in sessions:
        path = out / "sessions" / f"S{s.subject_id}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        pp.save_session(s, path)
        written.append(path)
    for stride in (60, 30):
        ws = pp.WindowSet.concat([pp.slice_windows(s, stride_s=stride) for s in sessions])
        ws.save(windows_path(out, stride))
        written += [windows_path(out, stride).with_suffix(".npz"),
                    windows_path(out, stride).with_suffix(".manifest.csv")]
    stats = pp.corpus_stats(sessions)
    pp.write_stats(stats, out / "stats.json")
    written.append(out / "stats.json")
    log.info("%d non-stress / %d stress seconds over %d subjects", stats["non_stress_seconds"],
             stats["stress_seconds"], len(sessions))
    return written


def gan_config(args, config, kind) -> gan.GanConfig:
    over = {**section(config, "gan"), **section(config, kind)}
    over.pop("stride", None)
    over.pop("kind", None)
    over["seed"] = args.seed
    if kind == "dp_cgan":
        eps = args.epsilon if args.epsilon is not None else over.pop("epsilon", 10.0)
        over.pop("epsilon", None)
        over["privacy"] = dp.PrivacySpec(float(eps), delta=float(over.pop("delta", 1e-3)),
                                         clip_norm=float(over.pop("clip_norm", 1.0)))
    elif args.epsilon is not None:
        raise UsageError("--epsilon only applies to --kind dp_cgan")
    return gan.GanConfig.defaults(kind, **over)


def cmd_train_gan(args, config) -> list[Path]:
    kind = args.kind or section(config, "gan").get("kind")
    if kind not in gan.KINDS:
        raise UsageError(f"--kind must be one of {', '.join(gan.KINDS)}")
    stride = int(section(config, "gan").get("stride", 30))
    pool = load_windows(args.root, stride)
    keep = parse_subjects(args.subjects)
    if keep is not None:
        pool = pool.for_subjects(keep)
    cfg = gan_config(args, config, kind)
    if args.fold in (None, ""):
        folds = [None]
    elif args.fold == "all":
        folds = pool.provenance
    else:
        folds = parse_subjects(args.fold)
    written = []
    for f in folds:
        train = pool if f is None else pool.subset(pool.subject_ids != f)
        if f is not None and f not in pool.provenance:
            raise DataError(f"fold subject {f} is not in the corpus")
        art = gan.train_gan(train, cfg, progress=_epoch_logger(kind, f))
        target = Path(args.out) if f is None else Path(args.out) / f"fold_S{f}"
        run = RunManifest("train-gan", {**config, "kind": kind, "fold": f, "gan": art.config.to_dict()},
                          args.seed, {"train_windows": gan.fingerprint(train)})
        art.manifest["run"] = run.finish([target / "weights.pt", target / "manifest.json"])
        art.save(target)
        if art.certificate is not None:
            log.info("fold %s: certificate epsilon %.4f (sigma %.4f)", f, art.certificate.epsilon,
                     art.certificate.sigma)
        written.append(target)
    return written


def _epoch_logger(kind, fold):
    def progress(epoch, traces):
        if epoch % 50 == 0:
            log.info("%s fold %s epoch %d: d %.4f g %.4f", kind, fold, epoch,
                     traces["d_loss"][-1], traces["g_loss"][-1])
    return progress


def cmd_generate(args, config) -> list[Path]:
    if not args.artifact:
        raise UsageError("generate needs --artifact")
    art = load_artifact(args.artifact)
    subjects = gan.synthesize_subjects(art, args.count, args.seed)
    ws = gan.subjects_to_windowset(subjects)
    target = Path(args.out) / "synthetic"
    ws.save(target)
    return [target.with_suffix(".npz"), target.with_suffix(".manifest.csv")]


def cmd_quality(args, config) -> list[Path]:
    if not args.artifact:
        raise UsageError("quality needs --artifact")
    art = load_artifact(args.artifact)
    opts = section(config, "quality")
    real = load_windows(args.root, 60)
    if art.train_subjects:
        real = real.for_subjects(art.train_subjects)
    count = max(1, math.ceil(len(real) / gan.SUBJECT_WINDOWS))
    synth = gan.subjects_to_windowset(gan.synthesize_subjects(art, count, args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = quality.quality_report(real, synth, args.seed, int(opts.get("bins", 50)))
    report["generator"] = {"kind": art.kind, "data_fingerprint": art.manifest.get("data_fingerprint"),
                           "certificate": art.certificate.to_dict() if art.certificate else None}
    written = [out / "quality.json"]
    (out / "quality.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    c = report["c2st"]
    _write_table(out / "c2st", ["both", "stress", "non_stress"],
                 [[c["accuracy_both"], c["accuracy_stress"], c["accuracy_nonstress"]]])
    written += [out / "c2st.csv", out / "c2st.json"]

    pca = quality.pca_project(real, synth)
    written += plots.pca_overlay(pca, real.labels, synth.labels, out / "pca")
    written += _tsne_plot(real, synth, out / "tsne", args.seed, opts)
    written += plots.correlation_heatmap(quality.correlation_with_p(quality.session_rows(real)),
                                         out / "correlation_real", "real")
    written += plots.correlation_heatmap(quality.correlation_with_p(quality.session_rows(synth)),
                                         out / "correlation_synthetic", "synthetic")
    written += plots.signal_histograms(real, synth, out / "histograms", int(opts.get("bins", 50)))
    return written


def _tsne_plot(real, synth, stem, seed, opts):
    limit = int(opts.get("tsne_points", 1000))
    perplexity = float(opts.get("tsne_perplexity", 30))
    rng = np.random.default_rng(seed)
    r = real.subset(np.sort(rng.choice(len(real), min(limit, len(real)), replace=False)))
    s = synth.subset(np.sort(rng.choice(len(synth), min(limit, len(synth)), replace=False)))
    both = np.concatenate([quality.flatten(r), quality.flatten(s)])
    try:
        emb = quality.tsne_embed(both, perplexity, seed)
    except quality.QualityError as exc:
        log.warning("skipping t-SNE: %s", exc)
        return []
    return plots.projection_overlay(emb[:len(r)], emb[len(r):], r.labels, s.labels, stem, "t-SNE",
                                    ("dim 1", "dim 2"))


def _write_table(stem, header, rows):
    loso.write_rows(Path(stem).with_suffix(".csv"), header, rows)
    Path(stem).with_suffix(".json").write_text(
        json.dumps([dict(zip(header, r)) for r in rows], indent=2, sort_keys=True) + "\n")


def cmd_loso(args, config) -> list[Path]:
    opts = section(config, "loso")
    strategy = args.strategy or opts.get("strategy", "original")
    if strategy not in loso.STRATEGIES:
        raise UsageError(f"--strategy must be one of {', '.join(loso.STRATEGIES)}")
    model = args.model or opts.get("model", "cnn")
    if model not in clf.KINDS:
        raise UsageError(f"--model must be one of {', '.join(clf.KINDS)}")
    corpus = load_windows(args.root, 60)
    keep = parse_subjects(args.subjects)
    if keep is not None:
        corpus = corpus.for_subjects(keep)
    generators = {}
    if strategy != "original":
        if not args.generators:
            raise UsageError(f"strategy {strategy} needs --generators (a directory of fold_S<id> artifacts)")
        for s in corpus.provenance:
            p = Path(args.generators) / f"fold_S{s}"
            if p.exists():
                generators[s] = load_artifact(p)
    kind = args.kind or opts.get("kind")
    if strategy != "original" and kind is None and generators:
        kind = next(iter(generators.values())).kind
    gen_eps = None
    if generators:
        certs = [g.certificate.epsilon for g in generators.values() if g.certificate is not None]
        gen_eps = max(certs) if certs else None
    plan = loso.ExperimentPlan(
        strategy=strategy, generator_kind=kind, generator_epsilon=gen_eps,
        synthetic_subjects=int(args.synthetic or opts.get("synthetic_subjects", 15)),
        classifier=model, repeats=int(args.repeats or opts.get("repeats", 10)), seed=args.seed,
        classifier_epsilon=args.epsilon if strategy != "tstr" else None,
        classifier_overrides=section(config, "classifier"))
    folds = parse_subjects(args.fold) if args.fold not in (None, "", "all") else None
    report = loso.run_loso(plan, corpus, generators, folds, progress=log.info)
    out = Path(args.out)
    written = list(report.write(out).values())
    written += plots.loso_per_subject(report, out / "per_subject_f1")
    return written


def cmd_baseline(args, config) -> list[Path]:
    corpus = load_windows(args.root, 60)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    feats = featurize_windows(corpus.windows)
    powers = signal_power(feats)
    rows = clf.sweep_combinations(powers, corpus.labels, corpus.subject_ids, args.seed)
    header = ["combo", "f1", "accuracy", "flags"]
    table = [["+".join(r["combo"]), round(r["f1"], 4), round(r["accuracy"], 4), ";".join(r["flags"])]
             for r in rows]
    _write_table(out / "combinations", header, table)
    best = max(rows, key=lambda r: r["f1"])
    full = clf.lr_baseline(powers, corpus.labels, corpus.subject_ids, ingest.CHANNELS, args.seed)
    change = power_change_by_label(powers, corpus.labels)
    summary = {"best": best, "all_signals": full, "power_change": change}
    (out / "baseline.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written = [out / "combinations.csv", out / "combinations.json", out / "baseline.json"]
    written += plots.baseline_bars(rows, out / "combinations_f1")
    written += plots.coefficient_bars(full["coefficients"], out / "coefficients")
    written += plots.power_change_bars(change, out / "power_change")
    for sid in corpus.provenance[:int(section(config, "baseline").get("signal_plots", 3))]:
        sub = corpus.for_subjects([sid])
        written += plots.subject_signals(sub.windows, sub.labels, out / f"signals_S{sid}", f"subject {sid}")
    return written


COMMANDS = {"preprocess": cmd_preprocess, "train-gan": cmd_train_gan, "generate": cmd_generate,
            "quality": cmd_quality, "loso": cmd_loso, "baseline": cmd_baseline}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wearsynth", description="Synthetic wearable stress data toolkit")
    ap.add_argument("--verbose", "-v", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, root_required=True):
        p.add_argument("--root", required=root_required, help="input directory (raw WESAD or processed corpus)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--config", help="flat key=value config file with dotted keys")
        return p

    p = common(sub.add_parser("preprocess", help="raw WESAD to normalised 1 Hz windows"))
    p.add_argument("--subjects", help="comma separated subject ids (default: all found)")

    p = common(sub.add_parser("train-gan", help="train a generator (optionally one per LOSO fold)"))
    p.add_argument("--kind", choices=gan.KINDS)
    p.add_argument("--epsilon", type=float, help="privacy budget for dp_cgan")
    p.add_argument("--fold", help="held-out subject id, comma list, or 'all'")
    p.add_argument("--subjects", help="restrict the training pool to these subjects")

    p = common(sub.add_parser("generate", help="sample synthetic subjects"), root_required=False)
    p.add_argument("--artifact", required=True)
    p.add_argument("--count", type=int, default=15)

    p = common(sub.add_parser("quality", help="fidelity report for a generator"))
    p.add_argument("--artifact", required=True)

    p = common(sub.add_parser("loso", help="leave-one-subject-out experiment"))
    p.add_argument("--strategy", help="original, tstr or augm")
    p.add_argument("--model", help="tsct, cnn, cnn_lstm or logreg")
    p.add_argument("--kind", choices=gan.KINDS, help="generator kind (recorded in the plan)")
    p.add_argument("--generators", help="directory holding fold_S<id> generator artifacts")
    p.add_argument("--synthetic", type=int, help="synthetic subjects per fold")
    p.add_argument("--repeats", type=int)
    p.add_argument("--epsilon", type=float, help="DP budget for classifiers trained on real data")
    p.add_argument("--subjects", help="restrict the corpus to these subjects")
    p.add_argument("--fold", help="only evaluate these held-out subjects")

    common(sub.add_parser("baseline", help="spectral-power logistic regression over all signal subsets"))
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        run = RunManifest(args.command, {**config, **{k: v for k, v in vars(args).items()
                                                      if k not in ("verbose", "config")}},
                          args.seed, _input_fingerprints(args))
        outputs = COMMANDS[args.command](args, config)
        if args.command != "train-gan":
            run.write(args.out, outputs)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (gan.TrainingFailure, clf.TrainingFailure, dp.PrivacyError) as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (DataError, ingest.IngestError, pp.PreprocessError, quality.QualityError, loso.PlanError,
            loso.LeakageError, gan.ConditioningError, clf.ClassifierError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _input_fingerprints(args) -> dict:
    out = {}
    for name in ("root", "artifact", "generators", "config"):
        p = getattr(args, name, None)
        if not p:
            continue
        p = Path(p)
        files = sorted(f for f in p.rglob("*") if f.is_file()) if p.is_dir() else [p] if p.exists() else []
        h = hashlib.sha256()
        for f in files:
            if f.name == RUN_MANIFEST or f.suffix in (".png",):
                continue
            h.update(str(f.relative_to(p) if p.is_dir() else f.name).encode())
            h.update(_content_digest(f))
        out[name] = h.hexdigest()
    return out


def _content_digest(path: Path) -> bytes:
    # npz archives embed write times, so hash their arrays instead of the bytes
    if path.suffix == ".npz":
        with np.load(path) as z:
            h = hashlib.sha256()
            for k in sorted(z.files):
                h.update(k.encode())
                h.update(np.ascontiguousarray(z[k]).tobytes())
            return h.digest()
    if path.name == "manifest.json":
        data = json.loads(path.read_text())
        data.get("run", {}).pop("timing", None)
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).digest()
    return hashlib.sha256(path.read_bytes()).digest()


if __name__ == "__main__":
    sys.exit(main())
