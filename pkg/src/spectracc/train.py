"""Adam + cosine annealing + early stopping for the KAN corrector, inference and checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .colorimetry import D65, WhitePoint
from .errors import ConfigError, DataError, FormatError, NumericalError, TruncationError
from .kan import (GROUPS, KanParams, build_features, init_params, kan_backward, kan_forward, loss_de76,
                  spline_locals)
from .spectral import PlanarImage

log = logging.getLogger(__name__)

CKPT_MAGIC = b"KANC1\n"


@dataclass
class TrainConfig:
    lr: float = 1e-4
    max_epochs: int = 300
    patience: int = 5
    batch: int = 4096
    seed: int = 0
    freeze: tuple[str, ...] = ()
    n_spectral: int = 6
    spectral_path: bool = True
    pixels_per_image: int = 2048
    val_pixels_per_image: int = 1024
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.freeze = tuple(self.freeze)
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1 or self.batch < 1:
            raise ConfigError("max_epochs and batch must be >= 1")
        unknown = set(self.freeze) - set(GROUPS)
        if unknown:
            raise ConfigError(f"unknown parameter groups in freeze: {sorted(unknown)}")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        extra = set(d) - set(known)
        if extra:
            raise ConfigError(f"unknown training config keys: {sorted(extra)}")
        return cls(**known)


ENCODER_ONLY = tuple(g for g in GROUPS if g != "ms_encoder")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 0.0

    @classmethod
    def zeros_like(cls, params: KanParams, lr: float) -> "OptimizerState":
        groups = params.groups()
        return cls({k: np.zeros_like(a) for k, a in groups.items()},
                   {k: np.zeros_like(a) for k, a in groups.items()}, 0, lr)


def cosine_lr(epoch: float, lr0: float, max_epochs: int) -> float:
    if epoch > max_epochs:
        raise ConfigError(f"epoch {epoch} beyond max_epochs {max_epochs}")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * epoch / max_epochs))


def adam_step(params: KanParams, state: OptimizerState, grads: dict[str, np.ndarray],
              config: TrainConfig) -> None:
    """In-place Adam update of every group not listed in ``config.freeze``."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.groups().items():
        if name in config.freeze:
            continue
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)


# ------------------------------------------------------------------- data


def upsample_bilinear(img: PlanarImage, height: int, width: int) -> np.ndarray:
    """Pixel-center aligned bilinear upsampling, replicate border. Returns (C, H, W)."""
    _, h, w = img.data.shape
    if height % h or width % w:
        raise DataError(f"{h}x{w} MS image does not divide {height}x{width}")
    ys = np.clip((np.arange(height) + 0.5) * (h / height) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(width) + 0.5) * (w / width) - 0.5, 0, w - 1)
    y0 = np.minimum(np.floor(ys).astype(int), h - 1)
    x0 = np.minimum(np.floor(xs).astype(int), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    d = img.data
    # a + t * (b - a) keeps constant regions exactly constant
    top = d[:, y0][:, :, x0] + tx * (d[:, y0][:, :, x1] - d[:, y0][:, :, x0])
    bot = d[:, y1][:, :, x0] + tx * (d[:, y1][:, :, x1] - d[:, y1][:, :, x0])
    return top + ty * (bot - top)


@dataclass
class PixelSet:
    rgb: np.ndarray  # (N, 3)
    ms: np.ndarray  # (N, C_ms)
    gt: np.ndarray  # (N, 3)

    def __len__(self) -> int:
        return len(self.rgb)

    def take(self, idx) -> "PixelSet":
        return PixelSet(self.rgb[idx], self.ms[idx], self.gt[idx])

    @classmethod
    def concat(cls, sets) -> "PixelSet":
        sets = list(sets)
        return cls(np.concatenate([s.rgb for s in sets]), np.concatenate([s.ms for s in sets]),
                   np.concatenate([s.gt for s in sets]))


def triplet_pixels(rgb: PlanarImage, ms: PlanarImage, gt: PlanarImage, n: int | None,
                   rng: np.random.Generator | None) -> PixelSet:
    """Sample ``n`` valid pixels (all when n is None) with their upsampled MS context."""
    mask = rgb.valid_mask & gt.valid_mask
    idx = np.flatnonzero(mask.ravel())
    if n is not None and n < idx.size:
        idx = np.sort(rng.choice(idx, n, replace=False))
    ms_up = upsample_bilinear(ms, rgb.height, rgb.width)
    return PixelSet(rgb.data.reshape(3, -1)[:, idx].T, ms_up.reshape(ms_up.shape[0], -1)[:, idx].T,
                    gt.data.reshape(3, -1)[:, idx].T)


def pixel_pool(triplets, per_image: int | None, seed: int) -> PixelSet:
    rng = np.random.default_rng(seed)
    sets = [triplet_pixels(t.rgb, t.ms, t.gt, per_image, rng) for t in triplets]
    if not sets:
        raise DataError("empty partition")
    return PixelSet.concat(sets)


# --------------------------------------------------------------- training


def batch_loss_and_grads(params: KanParams, batch: PixelSet, white: WhitePoint = D65):
    feats = build_features(batch.rgb, batch.ms, params)
    local = spline_locals(params, feats)
    pred = kan_forward(params, feats, local)
    dist, dpred = loss_de76(pred, batch.gt, white)
    n = len(batch)
    grads = kan_backward(params, feats, dpred / n, batch.ms, local)
    return float(dist.mean()), grads.groups()


def mean_de76(params: KanParams, pixels: PixelSet, white: WhitePoint = D65, chunk: int = 65536) -> float:
    total = 0.0
    for s in range(0, len(pixels), chunk):
        part = pixels.take(slice(s, s + chunk))
        pred = kan_forward(params, build_features(part.rgb, part.ms, params))
        total += float(loss_de76(pred, part.gt, white)[0].sum())
    return total / len(pixels)


@dataclass
class TrainResult:
    params: KanParams
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf
    stopped_early: bool = False


def _f32(params: KanParams) -> KanParams:
    out = params.copy()
    for a in out.groups().values():
        a[...] = a.astype(np.float32)
    return out


def train(train_pixels: PixelSet, val_pixels: PixelSet, config: TrainConfig,
          init: KanParams | None = None, white: WhitePoint = D65) -> TrainResult:
    """Mini-batch Adam on ΔE76 with per-epoch cosine lr and early stopping on validation ΔE76.

    Returns the best-validation parameters (rounded to float32 so checkpoints
    reproduce them exactly).
    """
    if len(train_pixels) == 0 or len(val_pixels) == 0:
        raise DataError("train and validation pixel sets must be non-empty")
    n_ms = train_pixels.ms.shape[1]
    if init is None:
        params = init_params(n_ms, config.n_spectral if config.spectral_path else 0, config.seed)
    else:
        params = init.copy()
        if params.n_ms_channels != n_ms:
            raise DataError(f"checkpoint expects {params.n_ms_channels} MS channels, data has {n_ms}")
    if not config.spectral_path:
        params.ms_encoder[...] = 0.0
    freeze = set(config.freeze)
    if not config.spectral_path:
        freeze.add("ms_encoder")
    run_cfg = TrainConfig(**{**asdict(config), "freeze": tuple(sorted(freeze))})

    state = OptimizerState.zeros_like(params, config.lr)
    # epoch 1 always sets the first best; the initial parameters are only a fallback
    result = TrainResult(_f32(params))
    stale = 0
    n = len(train_pixels)
    for epoch in range(1, config.max_epochs + 1):
        state.lr = cosine_lr(epoch - 1, config.lr, config.max_epochs)
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        losses = []
        for s in range(0, n, config.batch):
            batch = train_pixels.take(order[s:s + config.batch])
            loss, grads = batch_loss_and_grads(params, batch, white)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}, step {state.step}")
            adam_step(params, state, grads, run_cfg)
            losses.append(loss * len(batch))
        if not params.all_finite():
            raise NumericalError(f"parameters became non-finite at epoch {epoch}")
        train_loss = sum(losses) / n
        val = mean_de76(params, val_pixels, white)
        result.log.append({"epoch": epoch, "lr": state.lr, "train_de76": train_loss, "val_de76": val})
        log.debug("epoch %d lr %.3g train %.4f val %.4f", epoch, state.lr, train_loss, val)
        if val < result.best_val:
            result.best_val = val
            result.best_epoch = epoch
            result.params = _f32(params)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                result.stopped_early = True
                break
    return result


def train_on_dataset(ds, config: TrainConfig, init: KanParams | None = None) -> TrainResult:
    train_px = pixel_pool(ds.partition("train"), config.pixels_per_image, config.seed)
    val_px = pixel_pool(ds.partition("val"), config.val_pixels_per_image, config.seed + 1)
    return train(train_px, val_px, config, init)


# -------------------------------------------------------------- inference


def predict_image(params: KanParams, rgb: PlanarImage, ms: PlanarImage, chunk: int = 65536) -> PlanarImage:
    """Per-pixel KAN correction to XYZ; negative outputs are clipped to 0."""
    if rgb.n_channels != 3:
        raise DataError("KAN prediction expects a 3-channel RGB image")
    if ms.n_channels != params.n_ms_channels:
        raise DataError(f"model expects {params.n_ms_channels} MS channels, got {ms.n_channels}")
    if rgb.height % ms.height or rgb.width % ms.width or rgb.height // ms.height != rgb.width // ms.width:
        raise DataError(f"RGB {rgb.height}x{rgb.width} and MS {ms.height}x{ms.width} resolutions do not match")
    ms_up = upsample_bilinear(ms, rgb.height, rgb.width).reshape(ms.n_channels, -1).T
    flat_rgb = rgb.data.reshape(3, -1).T
    out = np.empty((flat_rgb.shape[0], 3))
    for s in range(0, len(out), chunk):
        feats = build_features(flat_rgb[s:s + chunk], ms_up[s:s + chunk], params)
        out[s:s + chunk] = kan_forward(params, feats)
    data = np.maximum(out, 0.0).T.reshape(3, rgb.height, rgb.width)
    return PlanarImage(data, "xyz", rgb.valid_mask)


# ------------------------------------------------------------- checkpoints


def save_checkpoint(params: KanParams, path, config: TrainConfig | None = None, extra: dict | None = None) -> None:
    """``KANC1`` line, one JSON header line, then little-endian f32 groups in GROUPS order."""
    header = {
        "n_ms_channels": params.n_ms_channels,
        "n_spectral": params.n_spectral,
        "n_features": params.n_features,
        "order": params.order,
        "knots": params.knots.tolist(),
        "shapes": {k: list(a.shape) for k, a in params.groups().items()},
        "config_hash": config.fingerprint() if config else None,
        "config": asdict(config) if config else None,
        "extra": extra or {},
    }
    payload = b"".join(np.ascontiguousarray(params.groups()[g], dtype="<f4").tobytes() for g in GROUPS)
    blob = CKPT_MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + struct.pack("<Q", len(payload)) + payload
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> tuple[KanParams, dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc
    if not blob.startswith(CKPT_MAGIC):
        raise FormatError(f"{path}: bad magic, expected {CKPT_MAGIC!r}, found {blob[:len(CKPT_MAGIC)]!r}")
    rest = blob[len(CKPT_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise TruncationError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(rest[:nl])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt checkpoint header ({exc})") from exc
    body = rest[nl + 1:]
    if len(body) < 8:
        raise TruncationError(f"{path}: truncated checkpoint payload length")
    (size,) = struct.unpack("<Q", body[:8])
    payload = body[8:]
    if len(payload) < size:
        raise TruncationError(f"{path}: checkpoint payload truncated ({len(payload)} of {size} bytes)")
    arrays = {}
    off = 0
    for g in GROUPS:
        shape = tuple(header["shapes"][g])
        count = int(np.prod(shape)) if shape else 1
        arrays[g] = np.frombuffer(payload[off:off + 4 * count], dtype="<f4").astype(np.float64).reshape(shape)
        off += 4 * count
    if not all(np.all(np.isfinite(a)) for a in arrays.values()):
        raise FormatError(f"{path}: non-finite parameters")
    params = KanParams(arrays["ms_encoder"], arrays["spline"], arrays["bypass"], arrays["bias"],
                       np.asarray(header["knots"]), header["order"])
    return params, header
