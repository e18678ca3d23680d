"""Command-line driver: synth, extract, train-eval, compare and plot.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime error,
4 protocol invariant violation (subject leakage).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .audio_io import AudioError, load_wav, save_wav
from .config import ConfigError, ExperimentConfig, load_config
from .corpus import CorpusError, CorpusManifest, SubjectLeakageError, build_manifest, render_item
from .evalstat import DegenerateSampleError, roc_auc, summarize_boxplot, wilcoxon_signed_rank
from .experiment import (FEATURE_KINDS, FeatureBank, check_no_leakage, clip_spectrograms,
                         protocol_splits, run_split, tune_allocator)
from .export import hpss_sidecar, png_bytes, side_by_side, write_hpss, write_spectrogram
from .learner import featurize

log = logging.getLogger("snorehpss")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_INVARIANT = 0, 2, 3, 4
LOCK_NAME = ".snorehpss.lock"
METRIC_FIELDS = ("acc", "sen", "spe", "prec", "sco", "f1", "auc")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- helpers

@contextmanager
def output_lock(out_dir: Path):
    """Advisory lock: refuse to run when another invocation holds the directory."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / LOCK_NAME
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(f"{out_dir} is locked by another run (remove {path} if stale)")
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


def _manifest_path(cfg: ExperimentConfig) -> Path:
    return cfg.out_dir / "manifest.jsonl"


def _clip_path(cfg: ExperimentConfig, item_id: str) -> Path:
    return cfg.out_dir / "clips" / f"{item_id}.wav"


def _feature_dir(cfg: ExperimentConfig, kind: str) -> Path:
    return cfg.out_dir / "features" / kind


def _load_manifest(cfg: ExperimentConfig) -> CorpusManifest:
    path = _manifest_path(cfg)
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}; run synth first")
    return CorpusManifest.load(path)


def _pool_map(fn, tasks, jobs: int, initializer=None, initargs=()):
    """Ordered map, in-process for jobs == 1."""
    if jobs <= 1:
        if initializer:
            initializer(*initargs)
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs, initializer=initializer,
                             initargs=initargs) as pool:
        return list(pool.map(fn, tasks))


def _rows_csv(rows: list, header: list) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in header})
    return buf.getvalue()


# --------------------------------------------------------------------------- synth

def _synth_one(task):
    item, path = task
    save_wav(path, render_item(item), fmt="float32")
    return item.id


def cmd_synth(cfg: ExperimentConfig, args) -> int:
    c = cfg.corpus
    manifest = build_manifest(c.n_snore, c.n_interferer, c.snr_list, c.seed,
                              n_subjects=c.n_subjects, test_fraction=c.test_fraction, k=c.k)
    clips = cfg.out_dir / "clips"
    clips.mkdir(parents=True, exist_ok=True)
    manifest.save(_manifest_path(cfg))
    if not args.no_audio:
        _pool_map(_synth_one, [(it, _clip_path(cfg, it.id)) for it in manifest.items], cfg.jobs)
    log.info("synth items=%d counts=%s out=%s", len(manifest.items), manifest.counts(), cfg.out_dir)
    return EXIT_OK


# --------------------------------------------------------------------------- extract

_EXTRACT = {}


def _extract_init(cfg, kinds, png, hpss_full):
    _EXTRACT.update(cfg=cfg, kinds=kinds, png=png, hpss_full=hpss_full)


def _extract_one(item_id):
    cfg, kinds = _EXTRACT["cfg"], _EXTRACT["kinds"]
    clip = load_wav(_clip_path(cfg, item_id))
    specs, result = clip_spectrograms(clip, kinds, cfg.tfr, cfg.hpss)
    tensors = {}
    for kind in kinds:
        directory = _feature_dir(cfg, kind)
        write_spectrogram(directory, item_id, specs[kind], _EXTRACT["png"])
        if kind == "harmonic":
            if _EXTRACT["hpss_full"]:
                write_hpss(directory, item_id, result, cfg.hpss, _EXTRACT["png"])
            else:
                write_spectrogram(directory, f"{item_id}.mask",
                                  result.enhanced.with_values(result.mask), _EXTRACT["png"])
                (directory / f"{item_id}.hpss.json").write_text(
                    hpss_sidecar(result, cfg.hpss) + "\n")
        tensors[kind] = featurize(specs[kind])
    return tensors


def cmd_extract(cfg: ExperimentConfig, args) -> int:
    kinds = tuple(args.kind) if args.kind else cfg.kinds
    bad = [k for k in kinds if k not in FEATURE_KINDS]
    if bad:
        raise UsageError(f"unknown feature kind(s) {bad}; choose from {FEATURE_KINDS}")
    manifest = _load_manifest(cfg)
    items = list(manifest.items)
    missing = [it.id for it in items if not _clip_path(cfg, it.id).exists()]
    if missing:
        report = cfg.out_dir / "extract_errors.txt"
        report.write_text("".join(f"missing clip: {i}\n" for i in missing))
        for i in missing:
            log.error("missing clip item=%s", i)
        raise FileNotFoundError(f"{len(missing)} clip(s) missing; see {report}")
    for kind in kinds:
        _feature_dir(cfg, kind).mkdir(parents=True, exist_ok=True)
    per_item = _pool_map(_extract_one, [it.id for it in items], cfg.jobs,
                         _extract_init, (cfg, kinds, args.png, args.hpss_full))
    for kind in kinds:
        bank = FeatureBank([it.id for it in items], np.array([it.label for it in items]),
                           [it.subject for it in items],
                           {kind: np.stack([t[kind] for t in per_item])})
        bank.save(_feature_dir(cfg, kind) / "bank.npz")
    log.info("extract items=%d kinds=%s", len(items), ",".join(kinds))
    return EXIT_OK


# --------------------------------------------------------------------------- train-eval

_TRAIN = {}


def _train_init(banks, train_cfg):
    tune_allocator()
    _TRAIN.update(banks=banks, train_cfg=train_cfg)


def _train_split(task):
    return run_split(_TRAIN["banks"], *task, _TRAIN["train_cfg"])


def _load_banks(cfg: ExperimentConfig, kinds) -> dict:
    banks = {}
    for kind in kinds:
        path = _feature_dir(cfg, kind) / "bank.npz"
        if not path.exists():
            raise FileNotFoundError(f"features for kind {kind!r} missing ({path}); run extract")
        banks[kind] = FeatureBank.load(path)
    return banks


def cmd_train_eval(cfg: ExperimentConfig, args) -> int:
    manifest = _load_manifest(cfg)
    manifest.check_disjoint()
    banks = _load_banks(cfg, cfg.kinds)
    for kind, bank in banks.items():
        absent = {it.id for it in manifest.items} - set(bank.ids)
        if absent:
            raise FileNotFoundError(f"{len(absent)} item(s) lack {kind} features")
    tasks = list(protocol_splits(manifest, cfg.protocol))
    for _, _, tr, va, te in tasks:
        check_no_leakage(tr, va, te)
    labels = {it.id: it.label for it in manifest.items}
    results = [r for chunk in _pool_map(_train_split, tasks, cfg.jobs, _train_init,
                                        (banks, cfg.protocol.train)) for r in chunk]

    reports = cfg.out_dir / "reports"
    for sub in ("curves", "scores"):
        (reports / sub).mkdir(parents=True, exist_ok=True)
    rows = []
    json_lines = []
    for r in results:
        kind, seed, fold, m, report = r.kind, r.seed, r.fold, r.metrics, r.report
        tag = f"{kind}_s{seed}_f{fold}"
        row = {"kind": kind, "seed": seed, "fold": fold, "best_epoch": report.best_epoch,
               "stopped_epoch": report.stopped_epoch}
        row.update({k: getattr(m, k) for k in METRIC_FIELDS})
        rows.append(row)
        json_lines.append(json.dumps({"kind": kind, "seed": seed, "fold": fold,
                                      "metrics": json.loads(m.to_json())}, sort_keys=True))
        (reports / "curves" / f"{tag}.csv").write_text(report.to_csv())
        (reports / "scores" / f"{tag}.csv").write_text(_rows_csv(
            [{"id": i, "label": labels[i], "score": repr(float(s))}
             for i, s in zip(r.test_ids, r.test_scores)], ["id", "label", "score"]))

    header = ["kind", "seed", "fold", "best_epoch", "stopped_epoch", *METRIC_FIELDS]
    (reports / "runs.csv").write_text(_rows_csv(rows, header))
    (reports / "runs.jsonl").write_text("\n".join(json_lines) + "\n")
    for kind in cfg.kinds:
        (reports / f"{kind}.csv").write_text(
            _rows_csv([r for r in rows if r["kind"] == kind], header))
    (reports / "aggregate.csv").write_text(_aggregate(rows, cfg.kinds))
    return EXIT_OK


def _aggregate(rows: list, kinds) -> str:
    header = ["kind", "metric", "n", "mean", "median", "q1", "q3",
              "whisker_low", "whisker_high", "n_outliers"]
    out = []
    for kind in kinds:
        for metric in METRIC_FIELDS:
            vals = [r[metric] for r in rows if r["kind"] == kind and r[metric] is not None]
            row = {"kind": kind, "metric": metric, "n": len(vals)}
            if vals:
                row["mean"] = repr(float(np.mean(vals)))
            if len(vals) >= 4:
                box = summarize_boxplot(vals)
                row.update(median=repr(box.median), q1=repr(box.q1), q3=repr(box.q3),
                           whisker_low=repr(box.whisker_low), whisker_high=repr(box.whisker_high),
                           n_outliers=len(box.outliers))
            out.append(row)
    return _rows_csv(out, header)


# --------------------------------------------------------------------------- compare

def _read_report(path, metric: str):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or metric not in rows[0]:
        raise UsageError(f"{path}: no {metric!r} column")
    return rows


def cmd_compare(cfg, args) -> int:
    rows_a = _read_report(args.report_a, args.metric)
    rows_b = _read_report(args.report_b, args.metric)
    if args.pair_by == "key":
        if not {"seed", "fold"} <= set(rows_a[0]) or not {"seed", "fold"} <= set(rows_b[0]):
            raise UsageError("--pair-by key needs seed and fold columns in both reports")
        key_a = {(r["seed"], r["fold"]): r for r in rows_a}
        key_b = {(r["seed"], r["fold"]): r for r in rows_b}
        if len(key_a) != len(rows_a) or len(key_b) != len(rows_b):
            raise UsageError("duplicate (seed, fold) keys; pairing is ambiguous")
        if set(key_a) != set(key_b):
            raise UsageError("reports cover different (seed, fold) runs")
        keys = sorted(key_a, key=lambda k: (int(k[0]), int(k[1])))
        rows_a, rows_b = [key_a[k] for k in keys], [key_b[k] for k in keys]
    elif len(rows_a) != len(rows_b):
        raise UsageError(f"reports differ in length ({len(rows_a)} vs {len(rows_b)})")
    try:
        a = [float(r[args.metric]) for r in rows_a]
        b = [float(r[args.metric]) for r in rows_b]
    except ValueError:
        raise UsageError(f"undefined {args.metric} values cannot be compared")
    res = wilcoxon_signed_rank(a, b, alternative=args.alternative)
    ranks_total = res.n_effective * (res.n_effective + 1) / 2.0
    better = res.p_value < 0.05 and res.statistic > ranks_total / 2.0
    print(f"W={res.statistic:g} n={res.n_effective} p={res.p_value:.6g} method={res.method} "
          f"alternative={res.alternative}")
    print(f"significantly better: {'yes' if better else 'no'}")
    out_dir = cfg.out_dir if cfg is not None else args.out
    if out_dir is not None:
        reports = Path(out_dir) / "reports"
        reports.mkdir(parents=True, exist_ok=True)
        payload = json.loads(res.to_json())
        payload.update(report_a=str(args.report_a), report_b=str(args.report_b),
                       metric=args.metric, significantly_better=better)
        (reports / "compare.json").write_text(json.dumps(payload, sort_keys=True) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------- plot

def _plot_clip(cfg: ExperimentConfig, clip, stem: str, figures: Path) -> None:
    specs, result = clip_spectrograms(clip, ("cqt", "harmonic"), cfg.tfr, cfg.hpss)
    write_spectrogram(figures, f"{stem}.cqt", specs["cqt"], png=True)
    write_hpss(figures, stem, result, cfg.hpss, png=True)
    (figures / f"{stem}.cqt_vs_harmonic.png").write_bytes(
        png_bytes(side_by_side(specs["cqt"].values, specs["harmonic"].values)))


def cmd_plot(cfg: ExperimentConfig, args) -> int:
    if not (args.item or args.wav or args.runs):
        raise UsageError("nothing to plot: give --item, --wav or --runs")
    figures = cfg.out_dir / "figures"
    figures.mkdir(parents=True, exist_ok=True)
    for item_id in args.item or []:
        _plot_clip(cfg, load_wav(_clip_path(cfg, item_id)), item_id, figures)
    for wav in args.wav or []:
        _plot_clip(cfg, load_wav(wav), Path(wav).stem, figures)
    if args.runs:
        reports = cfg.out_dir / "reports"
        score_files = sorted((reports / "scores").glob("*.csv"))
        if not score_files:
            raise FileNotFoundError(f"no run outputs under {reports}; run train-eval first")
        for path in score_files:
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
            curve, auc = roc_auc([float(r["score"]) for r in rows], [int(r["label"]) for r in rows])
            (figures / f"roc_{path.stem}.csv").write_text(curve.to_csv())
            curves = reports / "curves" / path.name
            (figures / f"learning_{path.stem}.csv").write_text(curves.read_text())
    log.info("plot out=%s", figures)
    return EXIT_OK


# --------------------------------------------------------------------------- entry point

def _global_flags(parser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", type=Path, default=default, help="experiment TOML file")
    parser.add_argument("--seed", type=int, default=default, help="override the corpus seed")
    parser.add_argument("--out", type=Path, default=default, help="override the output directory")
    parser.add_argument("--jobs", type=int, default=default, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snorehpss", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="build the corpus manifest and render clips")
    p.add_argument("--no-audio", action="store_true", help="write the manifest only")
    p = sub.add_parser("extract", help="compute spectrogram features for every item")
    p.add_argument("--kind", action="append", help="feature kind (repeatable); default from config")
    p.add_argument("--png", action="store_true", help="also write a PNG per matrix")
    p.add_argument("--hpss-full", action="store_true",
                   help="export harmonic, percussive, mask and enhanced matrices")
    sub.add_parser("train-eval", help="run the seeded k-fold protocol for every kind")
    p = sub.add_parser("compare", help="paired Wilcoxon test of two per-run reports")
    p.add_argument("report_a", type=Path)
    p.add_argument("report_b", type=Path)
    p.add_argument("--metric", default="acc", choices=METRIC_FIELDS)
    p.add_argument("--alternative", default="two-sided",
                   choices=("two-sided", "greater", "less"))
    p.add_argument("--pair-by", default="key", choices=("key", "row"),
                   help="pair runs by (seed, fold) or by row order")
    p = sub.add_parser("plot", help="spectrogram figures, ROC and learning-curve CSVs")
    p.add_argument("--item", action="append", help="corpus item id (repeatable)")
    p.add_argument("--wav", action="append", help="WAV file (repeatable)")
    p.add_argument("--runs", action="store_true", help="export ROC and learning curves of all runs")
    for subparser in sub.choices.values():
        _global_flags(subparser, suppress=True)
    return parser


COMMANDS = {"synth": cmd_synth, "extract": cmd_extract, "train-eval": cmd_train_eval,
            "compare": cmd_compare, "plot": cmd_plot}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        stream=sys.stderr, format="%(levelname)s %(name)s %(message)s")
    tune_allocator()
    try:
        cfg = None
        if args.config is not None:
            cfg = load_config(args.config, args.seed).with_overrides(out_dir=args.out,
                                                                     jobs=args.jobs)
        elif args.command != "compare":
            raise ConfigError("--config is required for this command")
        if args.command == "compare":
            return cmd_compare(cfg, args)
        with output_lock(cfg.out_dir):
            return COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError, DegenerateSampleError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except SubjectLeakageError as exc:
        log.error("invariant violation: %s", exc)
        return EXIT_INVARIANT
    except (OSError, AudioError, CorpusError, ValueError, RuntimeError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
