"""Declarative experiment configuration read from TOML."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .experiment import FEATURE_KINDS, ProtocolConfig
from .hpss import HpssConfig
from .learner import TrainConfig
from .tfr import TfrConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusConfig:
    seed: int
    n_snore: int = 100
    n_interferer: int = 200
    snr_list: tuple = (-5.0, 0.0, 5.0)
    n_subjects: int = 30
    test_fraction: float = 0.1
    k: int = 5


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusConfig
    protocol: ProtocolConfig
    out_dir: Path = Path("out")
    kinds: tuple = ("cqt", "harmonic")
    tfr: TfrConfig = TfrConfig()
    hpss: HpssConfig = HpssConfig()
    jobs: int = 1

    def with_overrides(self, seed=None, out_dir=None, jobs=None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, corpus=replace(cfg.corpus, seed=int(seed)))
        if out_dir is not None:
            cfg = replace(cfg, out_dir=Path(out_dir))
        if jobs is not None:
            if jobs < 1:
                raise ConfigError("--jobs must be at least 1")
            cfg = replace(cfg, jobs=int(jobs))
        return cfg


def _build(cls, table: dict, section: str, **extra):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    names = {f.name for f in fields(cls)}
    unknown = set(table) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    values = dict(table)
    for key, value in values.items():
        if isinstance(value, list):
            values[key] = tuple(value)
    try:
        return cls(**values, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def config_from_dict(data: dict, seed_override=None) -> ExperimentConfig:
    allowed = {"out_dir", "kinds", "jobs", "corpus", "tfr", "hpss", "train", "protocol"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    corpus_table = dict(data.get("corpus", {}))
    if "seed" not in corpus_table:
        if seed_override is None:
            raise ConfigError("corpus.seed must be given explicitly (or via --seed)")
        corpus_table["seed"] = seed_override
    protocol_table = dict(data.get("protocol", {}))
    if "seeds" not in protocol_table:
        raise ConfigError("protocol.seeds must be listed explicitly")
    if "train" in protocol_table:
        raise ConfigError("training settings belong in [train]")

    train_cfg = _build(TrainConfig, data.get("train", {}), "train")
    kinds = tuple(data.get("kinds", ("cqt", "harmonic")))
    bad = [k for k in kinds if k not in FEATURE_KINDS]
    if bad or not kinds:
        raise ConfigError(f"unknown feature kinds {bad}; choose from {FEATURE_KINDS}")
    jobs = data.get("jobs", 1)
    if not isinstance(jobs, int) or jobs < 1:
        raise ConfigError("jobs must be a positive integer")
    cfg = ExperimentConfig(
        corpus=_build(CorpusConfig, corpus_table, "corpus"),
        protocol=_build(ProtocolConfig, protocol_table, "protocol", train=train_cfg),
        out_dir=Path(data.get("out_dir", "out")),
        kinds=kinds,
        tfr=_build(TfrConfig, data.get("tfr", {}), "tfr"),
        hpss=_build(HpssConfig, data.get("hpss", {}), "hpss"),
        jobs=jobs,
    )
    return cfg.with_overrides(seed=seed_override)


def load_config(path, seed_override=None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, seed_override)
