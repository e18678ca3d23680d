"""Reproducible labelled corpora of synthetic snore mixtures and interferers.

Every item carries a JSON recipe from which its audio is re-rendered; nothing
depends on wall-clock time or global random state.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import signal

from .audio_io import CLIP_SECONDS, AudioClip, MixSpec, mix_at_snr, rms
from .rng import Xoshiro, child_seed

MANIFEST_VERSION = 1
NATIVE_RATE = 48000
INTERFERER_KINDS = ("click_train", "white_burst", "pink_burst", "cough_surrogate")
CLASSES = ("snore_mixture", "interferer")
SPLITS = ("train", "validation", "test")


class CorpusError(Exception):
    pass


class AliasingError(CorpusError):
    pass


class PoolExhaustedError(CorpusError):
    pass


class SubjectLeakageError(CorpusError):
    pass


# --------------------------------------------------------------------------- synthesis

@dataclass(frozen=True)
class SnoreSynthParams:
    f0_hz: float = 120.0
    n_harmonics: int = 12
    harmonic_rolloff: float = 1.0
    duration_s: float = 1.5
    jitter_pct: float = 1.0
    attack_s: float = 0.08
    decay_s: float = 0.25
    amplitude: float = 0.5

    def __post_init__(self):
        if not 50.0 <= self.f0_hz <= 250.0:
            raise ValueError("f0_hz must lie in [50, 250]")
        if not 0.3 <= self.duration_s <= 3.0:
            raise ValueError("duration_s must lie in [0.3, 3.0]")
        if self.n_harmonics < 1:
            raise ValueError("n_harmonics must be positive")
        if self.attack_s < 0 or self.decay_s < 0 or self.jitter_pct < 0:
            raise ValueError("envelope times and jitter must be nonnegative")


def _envelope(n: int, attack: int, decay: int) -> np.ndarray:
    env = np.ones(n)
    attack = min(attack, n)
    decay = min(decay, n - attack)
    if attack:
        env[:attack] = np.linspace(0.0, 1.0, attack, endpoint=False)
    if decay:
        env[n - decay:] = np.linspace(1.0, 0.0, decay)
    return env


def synth_snore(params: SnoreSynthParams, seed: int, sample_rate: int = NATIVE_RATE,
                clip_seconds: float = CLIP_SECONDS) -> AudioClip:
    """Enveloped harmonic stack with slow f0 jitter at a seeded onset in a silent clip."""
    if params.f0_hz * params.n_harmonics >= sample_rate / 2:
        raise AliasingError(
            f"{params.n_harmonics} harmonics of {params.f0_hz} Hz reach Nyquist at {sample_rate} Hz")
    rng = Xoshiro(seed)
    total = int(round(clip_seconds * sample_rate))
    n = min(int(round(params.duration_s * sample_rate)), total)
    onset = int(rng.random() * (total - n + 1))

    # piecewise-linear jitter trajectory, 20 control points per second
    n_ctrl = max(2, int(math.ceil(params.duration_s * 20)) + 1)
    ctrl = rng.uniform(-1.0, 1.0, n_ctrl) * params.jitter_pct / 100.0
    jitter = np.interp(np.linspace(0, n_ctrl - 1, n), np.arange(n_ctrl), ctrl)
    phase = 2.0 * np.pi * np.cumsum(params.f0_hz * (1.0 + jitter)) / sample_rate
    phase0 = rng.uniform(0.0, 2.0 * np.pi, params.n_harmonics)

    tone = np.zeros(n)
    for h in range(1, params.n_harmonics + 1):
        tone += np.sin(h * phase + phase0[h - 1]) / h ** params.harmonic_rolloff
    tone *= params.amplitude / np.max(np.abs(tone))
    tone *= _envelope(n, int(params.attack_s * sample_rate), int(params.decay_s * sample_rate))

    out = np.zeros(total)
    out[onset:onset + n] = tone
    return AudioClip(out, sample_rate, label="snore", source_tag=f"snore:{seed}")


@dataclass(frozen=True)
class InterfererParams:
    period_s: float = 0.25        # click_train
    burst_s: float = 1.0          # bursts and cough
    target_rms: float = 0.05
    tilt_hz: float = 1500.0       # cough low-pass corner
    decay_s: float = 0.15         # cough exponential decay
    n_coughs: int = 2


def draw_interferer_params(kind: str, rng: Xoshiro) -> InterfererParams:
    return InterfererParams(
        period_s=rng.uniform(0.15, 0.5),
        burst_s=rng.uniform(0.5, 3.0),
        target_rms=rng.uniform(0.02, 0.1),
        tilt_hz=rng.uniform(800.0, 3000.0),
        decay_s=rng.uniform(0.08, 0.3),
        n_coughs=rng.integers(1, 4),
    )


def _pink(rng: Xoshiro, n: int) -> np.ndarray:
    spectrum = np.fft.rfft(rng.normal(n))
    scale = np.ones(spectrum.size)
    scale[1:] = 1.0 / np.sqrt(np.arange(1, spectrum.size))
    return np.fft.irfft(spectrum * scale, n)


def synth_interferer(kind: str, seed: int, params: Optional[InterfererParams] = None,
                     sample_rate: int = NATIVE_RATE,
                     clip_seconds: float = CLIP_SECONDS) -> AudioClip:
    """Non-harmonic interferer of the given kind; deterministic in (kind, params, seed).

    ``params=None`` draws the parameters from the seed. Bursts and coughs are
    scaled so the whole-clip RMS equals ``target_rms``.
    """
    if kind not in INTERFERER_KINDS:
        raise ValueError(f"unknown interferer kind {kind!r}")
    rng = Xoshiro(seed)
    if params is None:
        params = draw_interferer_params(kind, rng)
    total = int(round(clip_seconds * sample_rate))
    out = np.zeros(total)

    if kind == "click_train":
        width = int(round(0.001 * sample_rate))
        period = int(round(params.period_s * sample_rate))
        for start in range(0, total, period):
            out[start:start + width] = 1.0
        out *= params.target_rms * math.sqrt(total / np.count_nonzero(out))
    else:
        n = min(int(round(params.burst_s * sample_rate)), total)
        onset = int(rng.random() * (total - n + 1))
        if kind == "white_burst":
            burst = rng.normal(n) * _envelope(n, n // 10, n // 10)
        elif kind == "pink_burst":
            burst = _pink(rng, n) * _envelope(n, n // 10, n // 10)
        else:
            b, a = signal.butter(1, params.tilt_hz / (sample_rate / 2))
            burst = signal.lfilter(b, a, rng.normal(n))
            t = np.arange(n) / sample_rate
            env = np.zeros(n)
            for _ in range(params.n_coughs):
                t0 = rng.uniform(0.0, 0.7) * n / sample_rate
                env += np.where(t >= t0, np.exp(-(t - t0) / params.decay_s), 0.0)
            burst *= env
        out[onset:onset + n] = burst
        out *= params.target_rms / rms(out)
    return AudioClip(out, sample_rate, label="interferer", source_tag=f"{kind}:{seed}")


def duration_histogram(durations_s, coverage: float = 0.97) -> float:
    """Smallest duration such that at least ``coverage`` of the events fit within it."""
    values = sorted(float(d) for d in durations_s)
    if not values:
        raise ValueError("durations must be nonempty")
    if not 0.0 < coverage <= 1.0:
        raise ValueError("coverage must lie in (0, 1]")
    rank = math.ceil(coverage * len(values) - 1e-9)
    return values[max(rank, 1) - 1]


# --------------------------------------------------------------------------- manifest

@dataclass(frozen=True)
class CorpusItem:
    id: str
    cls: str
    subject: str
    recipe: dict = field(hash=False)
    snr_db: Optional[float] = None
    split: str = "train"
    fold: Optional[int] = None

    def to_json(self) -> dict:
        return {"id": self.id, "class": self.cls, "subject": self.subject,
                "snr_db": self.snr_db, "split": self.split, "fold": self.fold,
                "recipe": self.recipe}

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusItem":
        return cls(id=obj["id"], cls=obj["class"], subject=obj["subject"],
                   recipe=obj["recipe"], snr_db=obj.get("snr_db"),
                   split=obj["split"], fold=obj.get("fold"))

    @property
    def label(self) -> int:
        return 1 if self.cls == "snore_mixture" else 0


@dataclass(frozen=True)
class CorpusManifest:
    items: tuple
    seed: int
    params: dict = field(default_factory=dict, hash=False)

    def counts(self) -> dict:
        out = {c: 0 for c in CLASSES}
        for item in self.items:
            out[item.cls] += 1
        return out

    def select(self, split: str) -> list:
        return [it for it in self.items if it.split == split]

    def subjects(self, split: Optional[str] = None) -> set:
        return {it.subject for it in self.items if split is None or it.split == split}

    def check_disjoint(self) -> None:
        """Raise :class:`SubjectLeakageError` if a test subject also appears in training."""
        test = self.subjects("test")
        training = {it.subject for it in self.items if it.split != "test"}
        shared = test & training
        if shared:
            raise SubjectLeakageError(f"subjects in both test and training: {sorted(shared)}")

    def dumps(self) -> str:
        header = {"seed": self.seed, "version": MANIFEST_VERSION, "params": self.params}
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(it.to_json(), sort_keys=True) for it in self.items]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "CorpusManifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise CorpusError("empty manifest")
        header = json.loads(lines[0])
        if header.get("version") != MANIFEST_VERSION:
            raise CorpusError(f"unsupported manifest version {header.get('version')}")
        items = tuple(CorpusItem.from_json(json.loads(ln)) for ln in lines[1:])
        return cls(items, header["seed"], header.get("params", {}))

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        return cls.loads(Path(path).read_text())


def _subject_voice(seed: int, subject: str) -> dict:
    rng = Xoshiro(child_seed(seed, f"voice:{subject}"))
    return {"f0_base": rng.uniform(60.0, 200.0), "rolloff": rng.uniform(0.6, 1.6)}


def _draw_snore_recipe(seed: int, item_name: str, voice: dict) -> dict:
    rng = Xoshiro(child_seed(seed, item_name))
    f0 = float(np.clip(voice["f0_base"] * (1.0 + rng.uniform(-0.08, 0.08)), 50.0, 250.0))
    params = SnoreSynthParams(
        f0_hz=f0,
        n_harmonics=int(min(20, 3900.0 // f0)),
        harmonic_rolloff=voice["rolloff"],
        duration_s=rng.uniform(0.3, 3.0),
        jitter_pct=rng.uniform(0.5, 3.0),
        attack_s=rng.uniform(0.03, 0.2),
        decay_s=rng.uniform(0.05, 0.3),
        amplitude=rng.uniform(0.2, 0.8),
    )
    return {"params": asdict(params), "seed": child_seed(seed, item_name + ":audio")}


def _interferer_recipe(seed: int, name: str, kind: str) -> dict:
    return {"kind": kind, "seed": child_seed(seed, name)}


def build_manifest(n_snore: int, n_interferer: int, snr_list=(-5.0, 0.0, 5.0), seed: int = 0,
                   n_subjects: int = 30, test_fraction: float = 0.1,
                   interferer_pool_size: Optional[int] = None, k: int = 5) -> CorpusManifest:
    """Mixtures of each snore with one distinct interferer at every SNR, plus unmixed interferers.

    Mixing partners and unmixed interferers are drawn without replacement from one
    pool of ``interferer_pool_size`` recordings (kinds cycling evenly), so the two
    sets never share a recording. Subjects are dealt round-robin from a seeded
    order; ``round(test_fraction * n_subjects)`` whole subjects form the test split
    and the rest are assigned to ``k`` folds.
    """
    if n_snore < 1 or n_interferer < 1:
        raise ValueError("counts must be positive")
    pool_size = n_snore + n_interferer if interferer_pool_size is None else interferer_pool_size
    if pool_size < n_snore + n_interferer:
        raise PoolExhaustedError(
            f"pool of {pool_size} interferers cannot supply {n_snore} partners "
            f"and {n_interferer} distinct unmixed sounds")

    rng = Xoshiro(seed)
    subjects = [f"S{i:03d}" for i in rng.permutation(n_subjects)]
    pool = [(f"noise-{j:05d}", INTERFERER_KINDS[j % len(INTERFERER_KINDS)]) for j in range(pool_size)]
    pool = [pool[j] for j in rng.permutation(pool_size)]
    unmixed, partners = pool[:n_interferer], pool[n_interferer:n_interferer + n_snore]

    n_test = max(1, int(round(test_fraction * n_subjects)))
    test_subjects = set(rng.choice(subjects, n_test))
    voices = {s: _subject_voice(seed, s) for s in subjects}

    items = []
    for i in range(n_snore):
        subject = subjects[i % n_subjects]
        snore = _draw_snore_recipe(seed, f"snore-{i:05d}", voices[subject])
        noise_name, kind = partners[i]
        noise = _interferer_recipe(seed, noise_name, kind)
        for snr in snr_list:
            recipe = {"snore": snore, "noise": noise, "noise_id": noise_name}
            items.append(CorpusItem(f"mix-{i:05d}-snr{float(snr):+g}", "snore_mixture", subject,
                                    recipe, snr_db=float(snr)))
    for j, (noise_name, kind) in enumerate(unmixed):
        subject = subjects[(n_snore + j) % n_subjects]
        items.append(CorpusItem(f"int-{j:05d}", "interferer", subject,
                                {"noise": _interferer_recipe(seed, noise_name, kind),
                                 "noise_id": noise_name}))

    items = [replace(it, split="test") if it.subject in test_subjects else it for it in items]
    manifest = CorpusManifest(tuple(items), int(seed), {
        "n_snore": n_snore, "n_interferer": n_interferer, "snr_list": [float(s) for s in snr_list],
        "n_subjects": n_subjects, "test_fraction": test_fraction, "pool_size": pool_size,
        "sample_rate": NATIVE_RATE, "clip_seconds": CLIP_SECONDS,
    })
    if k and len(manifest.subjects("train")) >= k:
        manifest = assign_folds(manifest, kfold_subject_splits(manifest, k, seed))
    manifest.check_disjoint()
    return manifest


# --------------------------------------------------------------------------- splits

@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train_subjects: frozenset
    validation_subjects: frozenset


def kfold_subject_splits(manifest: CorpusManifest, k: int = 5, seed: int = 0) -> list:
    """Partition the non-test subjects into k near-equal validation groups."""
    subjects = sorted(manifest.subjects() - manifest.subjects("test"))
    if k < 2 or len(subjects) < k:
        raise ValueError(f"need at least k={k} non-test subjects, have {len(subjects)}")
    order = Xoshiro(child_seed(seed, "kfold")).permutation(len(subjects))
    groups = [frozenset(subjects[j] for j in order[i::k]) for i in range(k)]
    everyone = frozenset(subjects)
    return [FoldSplit(i, everyone - g, g) for i, g in enumerate(groups)]


def assign_folds(manifest: CorpusManifest, splits: list) -> CorpusManifest:
    fold_of = {s: sp.fold for sp in splits for s in sp.validation_subjects}
    items = tuple(it if it.split == "test" else replace(it, fold=fold_of[it.subject])
                  for it in manifest.items)
    return replace(manifest, items=items)


def fold_items(manifest: CorpusManifest, split: FoldSplit):
    """(train, validation) item lists of one fold; test items are excluded."""
    train = [it for it in manifest.items if it.split != "test" and it.subject in split.train_subjects]
    val = [it for it in manifest.items if it.split != "test" and it.subject in split.validation_subjects]
    return train, val


def subsample_limited(manifest: CorpusManifest, n_snore_train: int, n_interferer_train: int,
                      seed: int = 0) -> CorpusManifest:
    """Seeded uniform subsample of the training items of each class; test items kept."""
    train = [it for it in manifest.items if it.split != "test"]
    pools = {c: [it for it in train if it.cls == c] for c in CLASSES}
    wanted = {"snore_mixture": n_snore_train, "interferer": n_interferer_train}
    keep = set()
    for cls in CLASSES:
        if not 0 <= wanted[cls] <= len(pools[cls]):
            raise ValueError(f"requested {wanted[cls]} {cls} items, {len(pools[cls])} available")
        rng = Xoshiro(child_seed(seed, f"subsample:{cls}"))
        keep.update(it.id for it in rng.choice(pools[cls], wanted[cls]))
    items = tuple(it for it in manifest.items if it.split == "test" or it.id in keep)
    params = dict(manifest.params, subsample={"n_snore": n_snore_train,
                                              "n_interferer": n_interferer_train, "seed": seed})
    return CorpusManifest(items, manifest.seed, params)


# --------------------------------------------------------------------------- rendering

def _render_snore(recipe: dict, sample_rate: int) -> AudioClip:
    return synth_snore(SnoreSynthParams(**recipe["params"]), recipe["seed"], sample_rate)


def _render_noise(recipe: dict, sample_rate: int) -> AudioClip:
    return synth_interferer(recipe["kind"], recipe["seed"], sample_rate=sample_rate)


def render_item(item: CorpusItem, sample_rate: int = NATIVE_RATE) -> AudioClip:
    if item.cls == "snore_mixture":
        snore = _render_snore(item.recipe["snore"], sample_rate)
        noise = _render_noise(item.recipe["noise"], sample_rate)
        clip = mix_at_snr(snore, noise, MixSpec(item.snr_db))
    else:
        clip = _render_noise(item.recipe["noise"], sample_rate)
    return replace(clip, subject_id=item.subject, source_tag=item.id + ";" + clip.source_tag)


def recipe_snr_db(item: CorpusItem, sample_rate: int = NATIVE_RATE) -> float:
    """SNR of a rendered mixture: the snore against the residual ``mixture - snore``.

    A recorded peak rescaling is undone first; it scales both parts equally.
    """
    snore = _render_snore(item.recipe["snore"], sample_rate).samples
    mixture = render_item(item, sample_rate)
    scale = 1.0
    for part in mixture.source_tag.split(";"):
        if part.startswith("peak_scale="):
            scale = float(part.split("=", 1)[1])
    residual = mixture.samples / scale - snore
    return 20.0 * math.log10(rms(snore) / rms(residual))
