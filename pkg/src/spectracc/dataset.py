"""Synthetic scenes, RGB/MS/XYZ triplet rendering, scene-wise splits and
homography misalignment of the MS modality."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import io, spectral
from .errors import ConfigError, DataError, NumericalError
from .pipeline import CameraProfile, build_camera_profile, default_camera_sensitivities, load_profile, save_profile
from .spectral import (PlanarImage, ReflectanceCube, SensitivitySet, Spectrum, WavelengthGrid,
                       downsample_area, flat_field_color, render_image)

log = logging.getLogger(__name__)

REFLECTANCE_RANGE = (0.02, 0.98)


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    cube: ReflectanceCube
    source: str = "synthetic"
    mask_note: str = ""


@dataclass(frozen=True)
class Triplet:
    rgb: PlanarImage
    ms: PlanarImage
    gt: PlanarImage
    meta: dict

    @property
    def scene_id(self) -> str:
        return self.meta["scene_id"]


@dataclass(frozen=True)
class SplitManifest:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def partition_of(self, scene_id: str) -> str:
        for name in ("train", "val", "test"):
            if scene_id in getattr(self, name):
                return name
        raise DataError(f"scene {scene_id!r} not in any partition")

    def as_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitManifest":
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), int(d["seed"]))


@dataclass(frozen=True)
class HomographyParams:
    max_translation: float = 2.0
    max_rotation: float = 1.0
    scale_jitter: float = 0.02
    max_perspective: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if min(self.max_translation, self.max_rotation, self.scale_jitter, self.max_perspective) < 0:
            raise ConfigError("homography bounds must be >= 0")


# ------------------------------------------------------------------ scenes


def synth_scene(seed: int, h: int = 128, w: int = 128, grid: WavelengthGrid = spectral.DEFAULT_GRID,
                n_blobs: int = 6) -> ReflectanceCube:
    """Smooth random reflectance: a spectrally flat-ish base plus Gaussian blobs.

    Each blob has a 2-D Gaussian footprint and a Gaussian spectral bump with
    width >= 25 nm, so neighbouring bands differ little.
    """
    if h < 8 or w < 8:
        raise ConfigError("scene must be at least 8x8")
    if n_blobs < 1:
        raise ConfigError("n_blobs must be >= 1")
    rng = np.random.default_rng(seed)
    lam = grid.wavelengths
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    base_level = rng.uniform(0.1, 0.4)
    tilt = rng.uniform(-0.15, 0.15) * (lam - lam.mean()) / (lam.max() - lam.min())
    refl = np.broadcast_to((base_level + tilt)[:, None, None], (lam.size, h, w)).copy()
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sy, sx = rng.uniform(h / 10, h / 3), rng.uniform(w / 10, w / 3)
        amp = rng.uniform(0.3, 0.8) * rng.choice([-0.5, 1.0], p=[0.25, 0.75])
        center = rng.uniform(lam.min() - 20, lam.max() + 20)
        width = rng.uniform(25.0, 80.0)
        footprint = np.exp(-0.5 * (((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2))
        bump = np.exp(-0.5 * ((lam - center) / width) ** 2)
        refl += amp * bump[:, None, None] * footprint[None]
    return ReflectanceCube(grid, np.clip(refl, *REFLECTANCE_RANGE))


def make_scene_record(scene_id: str, seed: int, h: int, w: int, grid: WavelengthGrid,
                      n_blobs: int = 6, white_patch: int = 0) -> SceneRecord:
    """Synthetic scene, optionally with a masked white calibration tile in the top-left corner."""
    cube = synth_scene(seed, h, w, grid, n_blobs)
    if not white_patch:
        return SceneRecord(scene_id, cube)
    planes = np.array(cube.planes)
    planes[:, :white_patch, :white_patch] = REFLECTANCE_RANGE[1]
    mask = np.ones((h, w), bool)
    mask[:white_patch, :white_patch] = False
    note = f"white reference tile {white_patch}x{white_patch} at (0,0) masked"
    return SceneRecord(scene_id, ReflectanceCube(grid, planes, mask), "synthetic", note)


def check_ingested_cube(cube: ReflectanceCube) -> ReflectanceCube:
    """Finiteness/range screening for externally supplied cubes; out-of-range pixels are masked."""
    ok = np.all(np.isfinite(cube.planes), axis=0) & np.all((cube.planes >= 0) & (cube.planes <= 1), axis=0)
    planes = np.where(ok[None], cube.planes, 0.0)
    return ReflectanceCube(cube.grid, planes, cube.valid_mask & ok)


# -------------------------------------------------------------- illuminants


def fluorescent_spectrum(name: str, grid: WavelengthGrid = spectral.DEFAULT_GRID, variant: int = 0) -> Spectrum:
    """Broad phosphor continuum plus mercury-like emission lines."""
    lam = grid.wavelengths
    if variant == 0:
        cont = 0.35 * np.exp(-0.5 * ((lam - 580) / 70) ** 2) + 0.1
        lines = [(405, 0.6), (436, 1.2), (546, 1.6), (578, 0.6), (611, 1.0)]
    else:
        cont = 0.3 * np.exp(-0.5 * ((lam - 500) / 90) ** 2) + 0.15
        lines = [(436, 1.5), (488, 0.5), (546, 1.2), (611, 0.5), (660, 0.4)]
    spikes = sum(a * np.exp(-0.5 * ((lam - c) / 6.0) ** 2) for c, a in lines)
    return Spectrum(grid, cont + spikes, name)


def illuminant_bank(grid: WavelengthGrid = spectral.DEFAULT_GRID, count: int | None = None) -> list[Spectrum]:
    """Luminance-normalized bank: blackbodies 2500-7500 K, D65, two fluorescents.

    With ``count`` the bank is subsampled evenly, always keeping D65 and the
    fluorescents when ``count >= 3``.
    """
    cmf = spectral.load_cmf(grid)
    blackbodies = [spectral.blackbody_spectrum(t, grid) for t in (2500, 3000, 3500, 4000, 4500, 5000, 5500, 6500, 7500)]
    extras = [spectral.load_d65(grid), fluorescent_spectrum("FL_a", grid, 0), fluorescent_spectrum("FL_b", grid, 1)]
    if count is not None:
        if count < 1:
            raise ConfigError("illuminant count must be >= 1")
        if count < 3:
            extras = extras[:count]
        n_bb = count - len(extras)
        idx = np.round(np.linspace(0, len(blackbodies) - 1, n_bb)).astype(int) if n_bb > 0 else []
        blackbodies = [blackbodies[i] for i in idx]
    return [spectral.luminance_normalized(s, cmf) for s in blackbodies + extras]


def normalize_to_white(sens: SensitivitySet, grid: WavelengthGrid | None = None) -> SensitivitySet:
    """Scale all channels jointly so the largest response to a D65 white is 1."""
    grid = grid or sens.grid
    sens = spectral.resample_sensitivities(sens, grid)
    cmf = spectral.load_cmf(grid)
    d65 = spectral.luminance_normalized(spectral.load_d65(grid), cmf)
    peak = flat_field_color(d65, sens).max()
    return SensitivitySet(grid, sens.channels / peak, sens.channel_names)


def default_ms_sensitivities(grid: WavelengthGrid = spectral.DEFAULT_GRID) -> SensitivitySet:
    """15 Gaussian narrowband channels, centers 410-690 nm, FWHM 25 nm."""
    raw = spectral.gaussian_sensitivities(np.linspace(410.0, 690.0, 15), 25.0, grid)
    return normalize_to_white(raw, grid)


def default_camera(grid: WavelengthGrid = spectral.DEFAULT_GRID, variant: int = 0) -> CameraProfile:
    sens = normalize_to_white(default_camera_sensitivities(grid, variant), grid)
    return build_camera_profile(f"synthcam{variant}", sens, grid=grid)


# ----------------------------------------------------------------- triplets


def generate_triplet(scene: SceneRecord, illum: Spectrum, camera: CameraProfile, ms_sens: SensitivitySet,
                     cmf: SensitivitySet, d65: Spectrum, ms_factor: int) -> Triplet:
    cube = scene.cube
    if cube.height % ms_factor or cube.width % ms_factor:
        raise DataError(f"scene {scene.scene_id}: {cube.height}x{cube.width} not divisible by {ms_factor}")
    rgb = render_image(cube, illum, camera.sensitivities, "camera-raw")
    ms = downsample_area(render_image(cube, illum, ms_sens, "ms-raw"), ms_factor)
    gt = render_image(cube, d65, cmf, "xyz")
    meta = {
        "scene_id": scene.scene_id,
        "illuminant": illum.name,
        "camera": camera.name,
        "gt_illuminant_rgb": flat_field_color(illum, camera.sensitivities).tolist(),
        "homography": np.eye(3).reshape(-1).tolist(),
    }
    return Triplet(rgb, ms, gt, meta)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_splits(scene_ids, seed: int) -> SplitManifest:
    """Scene-wise 80/20 train/test split, then 20% of train held out for validation."""
    ids = list(scene_ids)
    if len(set(ids)) != len(ids):
        raise DataError("scene ids must be unique")
    if len(ids) < 5:
        raise DataError(f"need at least 5 scenes to split, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_test = _round_half_up(0.2 * len(ids))
    n_val = _round_half_up(0.2 * (len(ids) - n_test))
    test = shuffled[:n_test]
    val = shuffled[n_test:n_test + n_val]
    train = shuffled[n_test + n_val:]
    return SplitManifest(tuple(train), tuple(val), tuple(test), seed)


# --------------------------------------------------------------- homography


def sample_homography(params: HomographyParams, index: int, center: tuple[float, float] = (0.0, 0.0),
                      max_retries: int = 16) -> np.ndarray:
    """Random rotation * scale * translation about ``center`` (x, y), plus a perspective row.

    Deterministic in (params.seed, index); the result has H[2, 2] = 1.
    """
    rng = np.random.default_rng([params.seed, index])
    cx, cy = center
    to_center = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)
    from_center = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    for _ in range(max_retries):
        theta = math.radians(rng.uniform(-1, 1) * params.max_rotation)
        s = 1.0 + rng.uniform(-1, 1) * params.scale_jitter
        tx, ty = rng.uniform(-1, 1, 2) * params.max_translation
        px, py = rng.uniform(-1, 1, 2) * params.max_perspective
        rot = np.array([[math.cos(theta), -math.sin(theta), 0], [math.sin(theta), math.cos(theta), 0], [0, 0, 1]])
        scale = np.diag([s, s, 1.0])
        trans = np.array([[1, 0, tx], [0, 1, ty], [0, 0, 1]], dtype=np.float64)
        persp = np.array([[1, 0, 0], [0, 1, 0], [px, py, 1]], dtype=np.float64)
        h = to_center @ trans @ rot @ scale @ persp @ from_center
        h = h / h[2, 2]
        if abs(np.linalg.det(h)) > 1e-6:
            return h
    raise NumericalError("could not sample a non-degenerate homography")


def warp_ms(ms: PlanarImage, h: np.ndarray) -> PlanarImage:
    """Warp by ``h`` (source -> destination pixel coords, x = column) via inverse mapping.

    Bilinear resampling with replicated borders; the mask is warped with nearest
    neighbour and cleared where the source point falls outside the image.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (3, 3) or abs(np.linalg.det(h)) < 1e-12:
        raise NumericalError("homography must be an invertible 3x3 matrix")
    if np.array_equal(h / h[2, 2], np.eye(3)):
        return ms
    inv = np.linalg.inv(h)
    _, rows, cols = ms.data.shape
    yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    src = inv @ np.stack([xx.ravel(), yy.ravel(), np.ones(xx.size)])
    sx = (src[0] / src[2]).reshape(rows, cols)
    sy = (src[1] / src[2]).reshape(rows, cols)
    coords = np.stack([sy, sx])
    data = np.stack([ndimage.map_coordinates(p, coords, order=1, mode="nearest") for p in ms.data])
    inside = (sx >= -0.5) & (sx <= cols - 0.5) & (sy >= -0.5) & (sy <= rows - 0.5)
    nn = ndimage.map_coordinates(ms.valid_mask.astype(np.uint8), coords, order=0, mode="nearest").astype(bool)
    return PlanarImage(data, ms.color_space, nn & inside)


# ------------------------------------------------------------ dataset I/O


@dataclass
class DatasetConfig:
    n_scenes: int = 24
    n_illuminants: int = 8
    size: int = 128
    ms_factor: int = 8
    n_blobs: int = 6
    white_patch: int = 8
    seed: int = 0
    split_seed: int = 0
    camera_variant: int = 0
    lambda_min: float = 400.0
    lambda_max: float = 700.0
    step: float = 10.0

    @property
    def grid(self) -> WavelengthGrid:
        return WavelengthGrid(self.lambda_min, self.lambda_max, self.step)

    def validate(self) -> None:
        if self.size % self.ms_factor:
            raise ConfigError(f"size {self.size} not divisible by ms_factor {self.ms_factor}")
        if self.n_scenes < 5:
            raise ConfigError("need at least 5 scenes")


@dataclass
class Dataset:
    triplets: list[Triplet]
    splits: SplitManifest
    camera: CameraProfile
    config: dict = field(default_factory=dict)
    paths: list[dict] | None = None

    def partition(self, name: str) -> list[Triplet]:
        ids = set(getattr(self.splits, name))
        return [t for t in self.triplets if t.scene_id in ids]


def synth_scenes(cfg: DatasetConfig) -> list[SceneRecord]:
    cfg.validate()
    width = max(3, len(str(cfg.n_scenes - 1)))
    return [make_scene_record(f"scene{i:0{width}d}", cfg.seed * 100003 + i, cfg.size, cfg.size, cfg.grid,
                              cfg.n_blobs, cfg.white_patch) for i in range(cfg.n_scenes)]


def write_scenes(scenes, out_dir) -> Path:
    """One HSC1 cube per scene plus ``scenes.json`` listing ids, sources and mask notes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for s in scenes:
        io.save_cube(s.cube, out / f"{s.scene_id}.hsc")
        index.append({"scene_id": s.scene_id, "file": f"{s.scene_id}.hsc", "source": s.source,
                      "mask_note": s.mask_note})
    io.write_json({"scenes": index}, out / "scenes.json")
    return out / "scenes.json"


def load_scenes(index_path, grid: WavelengthGrid | None = None) -> list[SceneRecord]:
    """Load cubes listed in ``scenes.json``; cubes on another grid are resampled to ``grid``."""
    path = Path(index_path)
    if path.is_dir():
        path = path / "scenes.json"
    try:
        entries = io.read_json(path)["scenes"]
    except FileNotFoundError as exc:
        raise DataError(f"{path}: {exc}") from exc
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed scene index ({exc})") from exc
    out = []
    for e in entries:
        cube = io.load_cube(path.parent / e["file"])
        if grid is not None and not spectral._same_grid(cube.grid, grid):
            cube = spectral.resample_cube(cube, grid)
        source = e.get("source", "ingested")
        if source != "synthetic":
            cube = check_ingested_cube(cube)
        out.append(SceneRecord(e["scene_id"], cube, source, e.get("mask_note", "")))
    ids = [s.scene_id for s in out]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate scene ids")
    return out


def build_dataset(cfg: DatasetConfig, threads: int = 1, camera: CameraProfile | None = None,
                  ms_sens: SensitivitySet | None = None, scenes: list[SceneRecord] | None = None) -> Dataset:
    """Render every (scene, illuminant) pair in memory. Output order is fixed regardless of ``threads``."""
    cfg.validate()
    grid = cfg.grid
    camera = camera or default_camera(grid, cfg.camera_variant)
    ms_sens = ms_sens or default_ms_sensitivities(grid)
    cmf = spectral.load_cmf(grid)
    d65 = spectral.luminance_normalized(spectral.load_d65(grid), cmf)
    illums = illuminant_bank(grid, cfg.n_illuminants)
    if scenes is None:
        scenes = synth_scenes(cfg)
    jobs = [(s, e) for s in scenes for e in illums]

    def run(job):
        return generate_triplet(job[0], job[1], camera, ms_sens, cmf, d65, cfg.ms_factor)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            triplets = list(pool.map(run, jobs))
    else:
        triplets = [run(j) for j in jobs]
    splits = make_splits([s.scene_id for s in scenes], cfg.split_seed)
    return Dataset(triplets, splits, camera, {"dataset": asdict(cfg)})


def misalign_dataset(ds: Dataset, params: HomographyParams) -> Dataset:
    """Warp every MS image by its own sampled homography (index = triplet position)."""
    out = []
    for i, t in enumerate(ds.triplets):
        center = ((t.ms.width - 1) / 2.0, (t.ms.height - 1) / 2.0)
        h = sample_homography(params, i, center)
        meta = dict(t.meta, homography=h.reshape(-1).tolist())
        out.append(Triplet(t.rgb, warp_ms(t.ms, h), t.gt, meta))
    config = dict(ds.config, misalignment=asdict(params))
    return Dataset(out, ds.splits, ds.camera, config)


def write_dataset(ds: Dataset, out_dir) -> Path:
    """Write MCI1 images, JSON sidecars, the camera profile and ``manifest.json``."""
    out = Path(out_dir)
    (out / "triplets").mkdir(parents=True, exist_ok=True)
    save_profile(ds.camera, out / "camera.json")
    entries = []
    for t in ds.triplets:
        stem = f"{t.meta['scene_id']}__{t.meta['illuminant']}"
        d = out / "triplets" / stem
        d.mkdir(exist_ok=True)
        io.save_image(t.rgb, d / "rgb.mci")
        io.save_image(t.ms, d / "ms.mci")
        io.save_image(t.gt, d / "gt.mci")
        io.write_json(t.meta, d / "meta.json")
        rel = f"triplets/{stem}"
        entries.append({"scene_id": t.meta["scene_id"], "illuminant": t.meta["illuminant"],
                        "rgb": f"{rel}/rgb.mci", "ms": f"{rel}/ms.mci", "gt": f"{rel}/gt.mci",
                        "meta": f"{rel}/meta.json"})
    manifest = {"triplets": entries, "splits": ds.splits.as_dict(), "camera_profile": "camera.json",
                "config": ds.config}
    io.write_json(manifest, out / "manifest.json")
    return out / "manifest.json"


def load_dataset(manifest_path) -> Dataset:
    path = Path(manifest_path)
    root = path.parent
    try:
        doc = io.read_json(path)
        entries = doc["triplets"]
        splits = SplitManifest.from_dict(doc["splits"])
        camera = load_profile(root / doc["camera_profile"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: malformed manifest ({exc})") from exc
    except FileNotFoundError as exc:
        raise DataError(f"{path}: {exc}") from exc
    triplets = []
    for e in entries:
        triplets.append(Triplet(io.load_image(root / e["rgb"]), io.load_image(root / e["ms"]),
                                io.load_image(root / e["gt"]), io.read_json(root / e["meta"])))
    ds = Dataset(triplets, splits, camera, doc.get("config", {}), entries)
    return ds


def scaled_triplet(t: Triplet, alpha: float) -> Triplet:
    return Triplet(spectral.scale_exposure(t.rgb, alpha), spectral.scale_exposure(t.ms, alpha),
                   spectral.scale_exposure(t.gt, alpha), dict(t.meta, exposure_alpha=alpha))

