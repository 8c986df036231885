"""The seed-pinned desk benchmark shared by the experiment script and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

from . import dataset as ds_mod
from . import evaluation
from . import train as kan_train

BASELINES = ("gw", "wp", "sog", "ggw", "ge1", "ge2")


def default_train_config(seed: int = 0) -> kan_train.TrainConfig:
    # 1024 sampled pixels per training image keeps a full run near a minute on one core
    return kan_train.TrainConfig(seed=seed, pixels_per_image=1024)


@dataclass
class BenchmarkConfig:
    dataset: ds_mod.DatasetConfig = field(default_factory=ds_mod.DatasetConfig)
    train: kan_train.TrainConfig = field(default_factory=default_train_config)
    homography: ds_mod.HomographyParams = field(default_factory=ds_mod.HomographyParams)
    threads: int = 1


@dataclass
class BenchmarkData:
    aligned: ds_mod.Dataset
    misaligned: ds_mod.Dataset
    seconds: float


def build(cfg: BenchmarkConfig | None = None) -> BenchmarkData:
    cfg = cfg or BenchmarkConfig()
    t0 = time.perf_counter()
    ds = ds_mod.build_dataset(cfg.dataset, cfg.threads)
    mis = ds_mod.misalign_dataset(ds, cfg.homography)
    return BenchmarkData(ds, mis, time.perf_counter() - t0)


def train_pair(ds: ds_mod.Dataset, cfg: BenchmarkConfig | None = None) -> dict[str, kan_train.TrainResult]:
    """RGB+MS model and its RGB-only ablation; the two configs differ only in ``spectral_path``."""
    cfg = cfg or BenchmarkConfig()
    return {"rgb+ms": kan_train.train_on_dataset(ds, cfg.train),
            "rgb-only": kan_train.train_on_dataset(ds, replace(cfg.train, spectral_path=False))}


def baseline_methods() -> list[evaluation.Method]:
    return [evaluation.Method.traditional(n) for n in BASELINES] + [evaluation.Method.oracle()]
