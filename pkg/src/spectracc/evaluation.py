"""Error statistics, per-method evaluation reports and the ablation drivers."""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import train as kan_train
from .colorimetry import image_metric_mean
from .dataset import Dataset, HomographyParams, Triplet, scaled_triplet
from .errors import ConfigError, DataError
from .illuminant import EstimatorSpec, IlluminantEstimate, estimator
from .kan import GROUPS, KanParams
from .pipeline import CameraProfile, traditional_correct
from .spectral import PlanarImage

STAT_FIELDS = ("mean", "median", "trimean", "best25_mean", "worst25_mean", "p95", "p99", "max")
TABLE_HEADERS = ("Mean", "Med.", "Tri.", "B-25", "W-25", "95-P", "99-P", "Max")
REPORT_METRICS = ("de00", "reproduction")
CONVENTIONS = {
    "quantile": "linear interpolation between closest ranks, r = 1 + (n - 1) q",
    "quartile_means": "B-25 / W-25 average the ceil(n / 4) lowest / highest values",
    "aggregation": "statistics over per-image means of valid pixels",
}


@dataclass(frozen=True)
class ErrorStats:
    mean: float
    median: float
    trimean: float
    best25_mean: float
    worst25_mean: float
    p95: float
    p99: float
    max: float
    n: int

    def as_dict(self) -> dict:
        return asdict(self)


def quantile(sorted_values: np.ndarray, q: float) -> float:
    """Quantile of an ascending array at rank r = 1 + (n - 1) q (1-based)."""
    if not 0.0 <= q <= 1.0:
        raise ConfigError(f"quantile level {q} outside [0, 1]")
    n = len(sorted_values)
    r = 1.0 + (n - 1) * q
    lo = min(int(math.floor(r)), n)
    frac = r - lo
    if lo >= n or frac == 0.0:
        return float(sorted_values[lo - 1])
    a, b = float(sorted_values[lo - 1]), float(sorted_values[lo])
    return a + frac * (b - a)


def aggregate_stats(values) -> ErrorStats:
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = v.size
    if n == 0:
        raise DataError("cannot aggregate an empty list of values")
    if not np.all(np.isfinite(v)):
        raise DataError("non-finite values in metric list")
    q1, q2, q3 = quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75)
    k = math.ceil(n / 4)
    # fsum on sorted data keeps the result independent of input order
    mean = math.fsum(v.tolist()) / n
    # clamp against one-ulp rounding so the ordering invariants hold exactly
    best = min(math.fsum(v[:k].tolist()) / k, mean)
    worst = max(math.fsum(v[-k:].tolist()) / k, mean)
    p95, p99, top = quantile(v, 0.95), quantile(v, 0.99), float(v[-1])
    return ErrorStats(mean, q2, (q1 + 2 * q2 + q3) / 4.0, best, worst, p95, p99, top, int(n))


# ------------------------------------------------------------------ methods


@dataclass(frozen=True)
class Method:
    """``traditional`` (needs ``spec``), ``oracle`` (true flat-field illuminant) or ``kan`` (needs ``params``)."""

    kind: str
    spec: EstimatorSpec | None = None
    params: KanParams | None = field(default=None, compare=False)
    label: str | None = None
    checkpoint_hash: str | None = None

    def __post_init__(self):
        if self.kind not in ("traditional", "oracle", "kan"):
            raise ConfigError(f"unknown method kind {self.kind!r}")
        if self.kind == "traditional" and self.spec is None:
            raise ConfigError("traditional method needs an estimator spec")
        if self.kind == "kan" and self.params is None:
            raise ConfigError("kan method needs parameters (missing checkpoint?)")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "traditional":
            return f"traditional-{self.spec.name}"
        return self.kind

    def describe(self) -> dict:
        d = {"kind": self.kind, "name": self.name}
        if self.spec is not None:
            d["estimator"] = self.spec.as_dict()
        if self.params is not None:
            d["params_sha256"] = self.checkpoint_hash or params_digest(self.params)
        return d

    @classmethod
    def traditional(cls, name: str = "gw", p=None, sigma=None, order=None) -> "Method":
        return cls("traditional", estimator(name, p, sigma, order))

    @classmethod
    def oracle(cls) -> "Method":
        return cls("oracle")

    @classmethod
    def kan(cls, params: KanParams, label: str = "kan") -> "Method":
        return cls("kan", params=params, label=label)


def params_digest(params: KanParams) -> str:
    h = hashlib.sha256()
    for g in GROUPS:
        h.update(np.ascontiguousarray(params.groups()[g], dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def correct_triplet(method: Method, t: Triplet, camera: CameraProfile) -> PlanarImage:
    if method.kind == "kan":
        return kan_train.predict_image(method.params, t.rgb, t.ms)
    if method.kind == "oracle":
        est = IlluminantEstimate.from_vector(t.meta["gt_illuminant_rgb"])
        return traditional_correct(t.rgb, camera, estimate=est)[0]
    return traditional_correct(t.rgb, camera, method.spec)[0]


# ------------------------------------------------------------------ reports


@dataclass
class EvaluationReport:
    method: str
    camera: str
    image_ids: list[str]
    per_image: dict[str, list[float]]
    stats: dict[str, ErrorStats]
    fingerprint: str
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "camera": self.camera,
            "fingerprint": self.fingerprint,
            "image_ids": self.image_ids,
            "per_image": self.per_image,
            "stats": {m: s.as_dict() for m, s in self.stats.items()},
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2) + "\n"

    def recomputed(self) -> dict[str, ErrorStats]:
        return {m: aggregate_stats(v) for m, v in self.per_image.items()}


def fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def evaluate_method(ds: Dataset, method: Method, partition: str = "test", threads: int = 1,
                    metrics=REPORT_METRICS) -> EvaluationReport:
    triplets = ds.partition(partition)
    if not triplets:
        raise DataError(f"partition {partition!r} is empty")

    def run(t: Triplet):
        pred = correct_triplet(method, t, ds.camera)
        return [image_metric_mean(pred, t.gt, m, sequential=True)[0] for m in metrics]

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(run, triplets))
    else:
        rows = [run(t) for t in triplets]
    per_image = {m: [r[i] for r in rows] for i, m in enumerate(metrics)}
    ids = [f"{t.meta['scene_id']}__{t.meta['illuminant']}" for t in triplets]
    key = {"method": method.describe(), "dataset": ds.config, "partition": partition, "metrics": list(metrics)}
    return EvaluationReport(method.name, ds.camera.name, ids, per_image,
                            {m: aggregate_stats(v) for m, v in per_image.items()}, fingerprint(key),
                            {"partition": partition, "conventions": CONVENTIONS, "method": method.describe()})


def format_table(reports, metrics=REPORT_METRICS) -> str:
    """Aligned plain-text table: one row per method, eight columns per metric."""
    labels = {"de00": "dE00", "reproduction": "Repro", "de76": "dE76", "angular": "Ang"}
    name_w = max([len("Method")] + [len(r.method) for r in reports])
    head1 = " " * name_w + " | " + " | ".join(f"{labels.get(m, m):^55}" for m in metrics)
    head2 = f"{'Method':<{name_w}} | " + " | ".join(" ".join(f"{h:>6}" for h in TABLE_HEADERS) for _ in metrics)
    lines = [head1, head2, "-" * len(head2)]
    for r in reports:
        cells = [" ".join(f"{getattr(r.stats[m], f):6.2f}" for f in STAT_FIELDS) for m in metrics]
        lines.append(f"{r.method:<{name_w}} | " + " | ".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- ablations


@dataclass(frozen=True)
class AblationConfig:
    exposure_alphas: tuple[float, ...] = (1.0, 0.75, 0.5)
    misalignment: HomographyParams | None = None
    spectral_path: bool = True

    def __post_init__(self):
        object.__setattr__(self, "exposure_alphas", tuple(float(a) for a in self.exposure_alphas))
        if not self.exposure_alphas or not all(a > 0 and math.isfinite(a) for a in self.exposure_alphas):
            raise ConfigError("exposure alphas must be positive and finite")


def scaled_dataset(ds: Dataset, alpha: float) -> Dataset:
    if not alpha > 0:
        raise ConfigError(f"exposure alpha must be positive, got {alpha}")
    return Dataset([scaled_triplet(t, alpha) for t in ds.triplets], ds.splits, ds.camera,
                   dict(ds.config, exposure_alpha=alpha))


def run_exposure_ablation(ds: Dataset, methods, alphas=(1.0, 0.75, 0.5), partition: str = "test",
                          threads: int = 1) -> dict:
    """Mean reproduction error per method and exposure level; rgb, ms and gt are all scaled."""
    cfg = AblationConfig(exposure_alphas=tuple(alphas))
    table: dict[str, dict[str, float]] = {}
    for alpha in cfg.exposure_alphas:
        scaled = scaled_dataset(ds, alpha)
        for m in methods:
            rep = evaluate_method(scaled, m, partition, threads, metrics=("reproduction",))
            table.setdefault(m.name, {})[repr(alpha)] = rep.stats["reproduction"].mean
    return {"metric": "reproduction", "alphas": list(cfg.exposure_alphas), "table": table}


def format_ablation_table(result: dict) -> str:
    alphas = result["alphas"]
    names = list(result["table"])
    w = max([len("Method")] + [len(n) for n in names])
    lines = [f"{'Method':<{w}} | " + " ".join(f"{'a=' + format(a, 'g'):>10}" for a in alphas)]
    lines.append("-" * len(lines[0]))
    for n in names:
        lines.append(f"{n:<{w}} | " + " ".join(f"{result['table'][n][repr(a)]:10.4f}" for a in alphas))
    return "\n".join(lines) + "\n"


def check_same_scenes(a: Dataset, b: Dataset) -> None:
    ka = [(t.meta["scene_id"], t.meta["illuminant"]) for t in a.triplets]
    kb = [(t.meta["scene_id"], t.meta["illuminant"]) for t in b.triplets]
    if ka != kb or a.splits != b.splits:
        raise DataError("aligned and misaligned datasets do not share the same scenes and splits")


def run_misalignment_experiment(aligned: Dataset, misaligned: Dataset, params: KanParams,
                                config: kan_train.TrainConfig | None = None, threads: int = 1) -> dict:
    """Evaluate the aligned-trained model on misaligned data before and after encoder-only fine-tuning."""
    check_same_scenes(aligned, misaligned)
    base = config or kan_train.TrainConfig()
    ft_cfg = kan_train.TrainConfig(**{**asdict(base), "freeze": kan_train.ENCODER_ONLY})
    before = evaluate_method(misaligned, Method.kan(params, "kan-aligned"), threads=threads)
    tuned = kan_train.train_on_dataset(misaligned, ft_cfg, init=params)
    after = evaluate_method(misaligned, Method.kan(tuned.params, "kan-finetuned"), threads=threads)
    changed = [g for g in GROUPS if not np.array_equal(params.groups()[g], tuned.params.groups()[g])]
    return {
        "unadapted": before,
        "finetuned": after,
        "delta_de00_mean": after.stats["de00"].mean - before.stats["de00"].mean,
        "changed_groups": changed,
        "finetune_log": tuned.log,
        "finetuned_params": tuned.params,
        "finetune_config": ft_cfg,
    }
