"""Feature extraction over a manifest and the seeded k-fold train/evaluate protocol."""

from __future__ import annotations

import ctypes
import logging
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from .audio_io import fix_duration, resample
from .corpus import (CorpusManifest, SubjectLeakageError, child_seed,
                     fold_items, kfold_subject_splits, render_item)
from .evalstat import MetricsReport, confusion, metrics, roc_auc
from .hpss import HpssConfig, separate
from .learner import Standardizer, TrainConfig, TrainReport, featurize, forward, train
from .rng import Xoshiro
from .tfr import TfrConfig, cqt_magnitude, mel_spectrogram, stft_magnitude

log = logging.getLogger(__name__)

FEATURE_KINDS = ("stft", "mel", "cqt", "harmonic")

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune_allocator(threshold: int = 1 << 30) -> bool:
    """Keep freed training buffers in the glibc heap instead of returning them to the OS.

    The network allocates many multi-megabyte temporaries per batch; with the
    default thresholds each one is a fresh mmap and page-faults on first touch,
    which costs about a third of the training time. No-op off glibc.
    """
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL("libc.so.6")
        return bool(libc.mallopt(_M_MMAP_THRESHOLD, threshold)
                    and libc.mallopt(_M_TRIM_THRESHOLD, threshold))
    except (OSError, AttributeError):
        return False


def check_kinds(kinds) -> tuple:
    kinds = tuple(kinds)
    unknown = [k for k in kinds if k not in FEATURE_KINDS]
    if unknown or not kinds:
        raise ValueError(f"unknown feature kinds {unknown}; choose from {FEATURE_KINDS}")
    return kinds


def clip_spectrograms(clip, kinds, tfr_cfg: TfrConfig = TfrConfig(),
                      hpss_cfg: HpssConfig = HpssConfig()):
    """Spectrograms of one clip for each requested kind.

    Returns ``(spectrograms, hpss_result)``; the HPSS result is None unless the
    harmonic kind was requested. One CQT serves both ``cqt`` and ``harmonic``.
    """
    kinds = check_kinds(kinds)
    out, result = {}, None
    if {"stft", "mel"} & set(kinds):
        low = fix_duration(resample(clip, tfr_cfg.stft_rate))
        stft = stft_magnitude(low, tfr_cfg)
        if "stft" in kinds:
            out["stft"] = stft
        if "mel" in kinds:
            out["mel"] = mel_spectrogram(stft, tfr_cfg)
    if {"cqt", "harmonic"} & set(kinds):
        cqt = cqt_magnitude(resample(fix_duration(clip), tfr_cfg.cqt_rate), tfr_cfg)
        if "cqt" in kinds:
            out["cqt"] = cqt
        if "harmonic" in kinds:
            result = separate(cqt, hpss_cfg)
            out["harmonic"] = result.enhanced
    return out, result


@dataclass
class FeatureBank:
    """Unstandardized (84, 64) tensors keyed by item id, one array per kind."""

    ids: list
    labels: np.ndarray
    subjects: list
    tensors: dict = field(default_factory=dict)  # kind -> (n_items, 84, 64)

    def index(self, ids) -> np.ndarray:
        pos = {item_id: i for i, item_id in enumerate(self.ids)}
        return np.array([pos[i] for i in ids], dtype=int)

    def save(self, path) -> None:
        np.savez_compressed(path, ids=np.array(self.ids), labels=self.labels,
                            subjects=np.array(self.subjects),
                            **{f"kind_{k}": v for k, v in self.tensors.items()})

    @classmethod
    def load(cls, path) -> "FeatureBank":
        with np.load(path) as data:
            tensors = {name[5:]: data[name] for name in data.files if name.startswith("kind_")}
            return cls(data["ids"].tolist(), data["labels"], data["subjects"].tolist(), tensors)


def build_feature_bank(items, kinds, tfr_cfg: TfrConfig = TfrConfig(),
                       hpss_cfg: HpssConfig = HpssConfig()) -> FeatureBank:
    kinds = check_kinds(kinds)
    items = list(items)
    bank = FeatureBank([it.id for it in items], np.array([it.label for it in items]),
                       [it.subject for it in items],
                       {k: np.empty((len(items), 84, 64)) for k in kinds})
    for n, item in enumerate(items):
        specs, _ = clip_spectrograms(render_item(item), kinds, tfr_cfg, hpss_cfg)
        for kind in kinds:
            bank.tensors[kind][n] = featurize(specs[kind])
        if (n + 1) % 50 == 0:
            log.info("extracted %d/%d items", n + 1, len(items))
    return bank


# --------------------------------------------------------------------------- protocol

@dataclass(frozen=True)
class ProtocolConfig:
    """Limited-data protocol: per (seed, fold) draw a fixed number of training
    and validation items of each class from that fold's subjects."""

    seeds: tuple = tuple(range(10))
    k: int = 5
    n_train_snore: int = 90
    n_train_interferer: int = 60
    n_val_snore: int = 30
    n_val_interferer: int = 20
    train: TrainConfig = TrainConfig()

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seed panel is empty")
        if min(self.n_train_snore, self.n_train_interferer,
               self.n_val_snore, self.n_val_interferer) < 1:
            raise ValueError("per-class item counts must be positive")


@dataclass
class RunResult:
    kind: str
    seed: int
    fold: int
    metrics: MetricsReport
    report: TrainReport
    test_ids: list
    test_scores: np.ndarray

    def row(self) -> dict:
        out = {"kind": self.kind, "seed": self.seed, "fold": self.fold,
               "best_epoch": self.report.best_epoch, "stopped_epoch": self.report.stopped_epoch}
        out.update({k: getattr(self.metrics, k) for k in
                    ("acc", "sen", "spe", "prec", "sco", "f1", "auc")})
        return out


def _draw(items: list, n_snore: int, n_interferer: int, rng: Xoshiro) -> list:
    chosen = []
    for cls, n in (("snore_mixture", n_snore), ("interferer", n_interferer)):
        pool = [it for it in items if it.cls == cls]
        if n > len(pool):
            raise ValueError(f"fold has {len(pool)} {cls} items, {n} requested")
        chosen += rng.choice(pool, n)
    return sorted(chosen, key=lambda it: it.id)


def check_no_leakage(train_items, val_items, test_items) -> None:
    groups = [{it.subject for it in g} for g in (train_items, val_items, test_items)]
    for (a, b), name in (((0, 1), "train/validation"), ((0, 2), "train/test"),
                         ((1, 2), "validation/test")):
        shared = groups[a] & groups[b]
        if shared:
            raise SubjectLeakageError(f"subjects shared across {name}: {sorted(shared)}")


def protocol_splits(manifest: CorpusManifest, cfg: ProtocolConfig):
    """Yield ``(seed, fold, train_items, val_items, test_items)`` in a fixed order."""
    test_items = manifest.select("test")
    if not test_items:
        raise ValueError("manifest has no test items")
    for seed in cfg.seeds:
        for split in kfold_subject_splits(manifest, cfg.k, child_seed(seed, "folds")):
            train_pool, val_pool = fold_items(manifest, split)
            rng = Xoshiro(child_seed(seed, f"draw:{split.fold}"))
            train_items = _draw(train_pool, cfg.n_train_snore, cfg.n_train_interferer, rng)
            val_items = _draw(val_pool, cfg.n_val_snore, cfg.n_val_interferer, rng)
            check_no_leakage(train_items, val_items, test_items)
            yield seed, split.fold, train_items, val_items, test_items


def run_single(bank: FeatureBank, kind: str, train_items, val_items, test_items,
               train_cfg: TrainConfig):
    """Train on one split of one feature kind and score the test items."""
    data = bank.tensors[kind]
    ids = [[it.id for it in g] for g in (train_items, val_items, test_items)]
    x_tr, x_va, x_te = (data[bank.index(g)] for g in ids)
    y_tr, y_va, y_te = (bank.labels[bank.index(g)] for g in ids)
    scaler = Standardizer.fit(x_tr)
    model, report = train(scaler.apply(x_tr), y_tr, scaler.apply(x_va), y_va, train_cfg)
    scores = forward(model, scaler.apply(x_te).astype(model.w1.dtype))[:, 1].astype(np.float64)
    result = metrics(confusion((scores >= 0.5).astype(int), y_te))
    _, auc = roc_auc(scores, y_te)
    return result.with_auc(auc), report, ids[2], scores


def split_train_config(base: TrainConfig, seed: int, fold: int) -> TrainConfig:
    """Training seed of one (panel seed, fold) run; shared by every feature kind."""
    return replace(base, seed=child_seed(seed, f"train:{fold}"))


def run_split(banks: dict, seed: int, fold: int, train_items, val_items, test_items,
              base_cfg: TrainConfig) -> list:
    """Train and test every kind in ``banks`` (kind -> FeatureBank) on one split."""
    train_cfg = split_train_config(base_cfg, seed, fold)
    results = []
    for kind, bank in banks.items():
        m, report, test_ids, scores = run_single(bank, kind, train_items, val_items,
                                                 test_items, train_cfg)
        results.append(RunResult(kind, seed, fold, m, report, test_ids, scores))
        log.info("seed %d fold %d %s acc=%.4f auc=%.4f epochs=%d", seed, fold, kind,
                 m.acc, m.auc, report.stopped_epoch)
    return results


def run_protocol(manifest: CorpusManifest, bank: FeatureBank, kinds,
                 cfg: ProtocolConfig = ProtocolConfig()) -> list:
    """Every (seed, fold, kind) run; each kind sees the same splits and training seed."""
    banks = {kind: bank for kind in check_kinds(kinds)}
    results = []
    for seed, fold, tr, va, te in protocol_splits(manifest, cfg):
        results += run_split(banks, seed, fold, tr, va, te, cfg.train)
    return results


def paired_values(results, kind: str, metric: str = "acc") -> np.ndarray:
    """Metric values of one kind ordered by (seed, fold)."""
    rows = sorted((r for r in results if r.kind == kind), key=lambda r: (r.seed, r.fold))
    return np.array([getattr(r.metrics, metric) for r in rows], dtype=np.float64)
