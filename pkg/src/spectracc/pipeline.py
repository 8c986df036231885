"""Traditional two-stage correction: von Kries white balance, then a CST
interpolated between two calibrated anchors by estimated CCT."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import spectral
from .colorimetry import xy_chromaticity
from .errors import ConfigError, DataError, NumericalError, RankDeficientError
from .illuminant import EstimatorSpec, IlluminantEstimate, minkowski_estimate
from .spectral import PlanarImage, SensitivitySet, WavelengthGrid

log = logging.getLogger(__name__)

CCT_RANGE = (1000.0, 25000.0)


@dataclass(frozen=True)
class CstPreset:
    m_lo: np.ndarray
    cct_lo: float
    m_hi: np.ndarray
    cct_hi: float

    def __post_init__(self):
        lo = np.asarray(self.m_lo, dtype=np.float64)
        hi = np.asarray(self.m_hi, dtype=np.float64)
        for name, m in (("m_lo", lo), ("m_hi", hi)):
            if m.shape != (3, 3) or not np.all(np.isfinite(m)):
                raise ConfigError(f"{name} must be a finite 3x3 matrix")
            if abs(np.linalg.det(m)) <= 1e-9:
                raise ConfigError(f"{name} is singular")
        if not self.cct_lo < self.cct_hi:
            raise ConfigError("cct_lo must be below cct_hi")
        object.__setattr__(self, "m_lo", lo)
        object.__setattr__(self, "m_hi", hi)


@dataclass(frozen=True)
class CameraProfile:
    name: str
    sensitivities: SensitivitySet
    cst: CstPreset
    # unit-norm camera response to the high-CCT calibration illuminant
    white_hi: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sensitivities.n_channels != 3:
            raise ConfigError(f"camera profile needs 3 channels, got {self.sensitivities.n_channels}")


@dataclass(frozen=True)
class CorrectionRecord:
    estimate: IlluminantEstimate
    cct: float
    cct_clamped: bool
    matrix: np.ndarray

    def as_dict(self) -> dict:
        return {
            "estimate_rgb": self.estimate.rgb.tolist(),
            "cct": self.cct,
            "cct_clamped": self.cct_clamped,
            "matrix": self.matrix.tolist(),
        }


def von_kries_correct(img: PlanarImage, est: IlluminantEstimate) -> PlanarImage:
    """Divide channel c by est[c]*sqrt(3); a pixel equal to the estimate maps to (1,1,1)."""
    if img.n_channels != 3:
        raise DataError(f"von Kries expects 3 channels, got {img.n_channels}")
    rgb = np.asarray(est.rgb, dtype=np.float64)
    if np.any(rgb <= 0):
        raise DataError(f"estimate components must be positive, got {rgb}")
    gains = 1.0 / (rgb * np.sqrt(3.0))
    return img.replace(data=img.data * gains[:, None, None])


def mccamy_cct(x: float, y: float) -> tuple[float, bool]:
    """McCamy's cubic CCT approximation, clamped to CCT_RANGE. Returns (cct, clamped)."""
    denom = 0.1858 - y
    if denom == 0:
        log.warning("chromaticity y=0.1858 is singular for McCamy's formula; clamping")
        return CCT_RANGE[1] if x > 0.3320 else CCT_RANGE[0], True
    n = (x - 0.3320) / denom
    cct = 449.0 * n ** 3 + 3525.0 * n ** 2 + 6823.3 * n + 5520.33
    clamped = not (CCT_RANGE[0] <= cct <= CCT_RANGE[1])
    if clamped:
        log.info("CCT %.1f K outside [%g, %g]; clamping", cct, *CCT_RANGE)
    return float(np.clip(cct, *CCT_RANGE)), clamped


def estimate_xyz(est: IlluminantEstimate, profile: CameraProfile) -> np.ndarray:
    """Camera-space illuminant mapped to XYZ through the high-CCT matrix."""
    v = est.rgb if profile.white_hi is None else est.rgb / profile.white_hi
    return profile.cst.m_hi @ v


def _estimate_cct(est: IlluminantEstimate, profile: CameraProfile) -> tuple[float, bool]:
    xyz = estimate_xyz(est, profile)
    if xyz.sum() <= 0:
        raise NumericalError(f"illuminant maps to non-positive XYZ {xyz}")
    x, y = xy_chromaticity(xyz)
    return mccamy_cct(float(x), float(y))


def estimate_cct(est: IlluminantEstimate, profile: CameraProfile) -> float:
    return _estimate_cct(est, profile)[0]


def calibrate_cst(patch_pairs, neutral=None, ridge: float = 1e-12) -> tuple[np.ndarray, float]:
    """Least-squares 3x3 M with M @ v_i ≈ x_i. Returns (M, residual RMS).

    ``patch_pairs`` is a sequence of (camera triple, XYZ triple), or a pair of
    (N, 3) arrays. If ``neutral=(v_n, x_n)`` is given, M @ v_n = x_n holds
    exactly (white-preserving fit via Lagrange multipliers).
    """
    v, x = _as_pair_arrays(patch_pairs)
    if v.shape[0] < 3 or np.linalg.matrix_rank(v) < 3:
        raise RankDeficientError(f"need >= 3 linearly independent camera triples, got rank "
                                 f"{np.linalg.matrix_rank(v) if v.size else 0} from {v.shape[0]}")
    gram = v.T @ v + ridge * np.eye(3)
    rhs = v.T @ x  # (3, 3): column r is V^T x_r
    if neutral is None:
        m = np.linalg.solve(gram, rhs).T
    else:
        vn = np.asarray(neutral[0], dtype=np.float64)
        xn = np.asarray(neutral[1], dtype=np.float64)
        kkt = np.zeros((4, 4))
        kkt[:3, :3] = gram
        kkt[:3, 3] = vn
        kkt[3, :3] = vn
        m = np.empty((3, 3))
        for r in range(3):
            sol = np.linalg.solve(kkt, np.concatenate([rhs[:, r], [xn[r]]]))
            m[r] = sol[:3]
    resid = v @ m.T - x
    rms = float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1))))
    return m, rms


def _as_pair_arrays(patch_pairs) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(patch_pairs, tuple) and len(patch_pairs) == 2 and np.ndim(patch_pairs[0]) == 2:
        v, x = patch_pairs
    else:
        pairs = list(patch_pairs)
        if not pairs:
            raise RankDeficientError("no calibration patches")
        v = [p[0] for p in pairs]
        x = [p[1] for p in pairs]
    v = np.asarray(v, dtype=np.float64).reshape(-1, 3)
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    if v.shape != x.shape:
        raise DataError("camera and XYZ patch arrays differ in length")
    return v, x


def interpolation_weight(preset: CstPreset, cct: float) -> float:
    if not cct > 0:
        raise DataError(f"CCT must be positive, got {cct}")
    w = (1.0 / cct - 1.0 / preset.cct_hi) / (1.0 / preset.cct_lo - 1.0 / preset.cct_hi)
    return float(np.clip(w, 0.0, 1.0))


def interpolate_cst(preset: CstPreset, cct: float) -> np.ndarray:
    """Blend the anchors linearly in reciprocal CCT (mired)."""
    w = interpolation_weight(preset, cct)
    if w == 1.0:
        return preset.m_lo.copy()
    if w == 0.0:
        return preset.m_hi.copy()
    return w * preset.m_lo + (1.0 - w) * preset.m_hi


def apply_matrix(img: PlanarImage, m: np.ndarray, color_space: str = "xyz") -> PlanarImage:
    return PlanarImage(np.tensordot(m, img.data, axes=(1, 0)), color_space, img.valid_mask)


def traditional_correct(img: PlanarImage, profile: CameraProfile, spec: EstimatorSpec | None = None,
                        estimate: IlluminantEstimate | None = None,
                        saturation: float | None = None) -> tuple[PlanarImage, CorrectionRecord]:
    """AWB then CST. Pass ``estimate`` to bypass the statistical estimator (oracle mode)."""
    if img.n_channels != 3 or img.color_space != "camera-raw":
        raise DataError("traditional correction expects a 3-channel camera-raw image")
    if estimate is None:
        if spec is None:
            raise ConfigError("either an estimator spec or an explicit estimate is required")
        estimate = minkowski_estimate(img, spec, saturation)
    balanced = von_kries_correct(img, estimate)
    cct, clamped = _estimate_cct(estimate, profile)
    m = interpolate_cst(profile.cst, cct)
    return apply_matrix(balanced, m), CorrectionRecord(estimate, cct, clamped, m)


# ------------------------------------------------------------ calibration


def calibration_targets(sens: SensitivitySet, illum: spectral.Spectrum, cmf: SensitivitySet,
                        d65: spectral.Spectrum, chart: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """White-balanced camera triples and D65 XYZ targets for a reflectance chart.

    Returns (camera (N,3), xyz (N,3), unit-norm flat-field of ``illum``).
    """
    illum = spectral.luminance_normalized(illum, cmf)
    d65 = spectral.luminance_normalized(d65, cmf)
    step = sens.grid.step
    cam = chart @ (sens.channels * illum.values).T * step
    xyz = chart @ (cmf.channels * d65.values).T * step
    flat = spectral.flat_field_color(illum, sens)
    est = IlluminantEstimate.from_vector(flat)
    cam_wb = cam / (est.rgb * np.sqrt(3.0))
    return cam_wb, xyz, est.rgb


def build_camera_profile(name: str, sens: SensitivitySet, cct_lo: float = 2500.0, cct_hi: float = 6500.0,
                         grid: WavelengthGrid | None = None) -> CameraProfile:
    """Calibrate both CST anchors from the shipped 24-patch chart.

    The chart is rendered under Planck SPDs at ``cct_lo``/``cct_hi``, white
    balanced with the true flat-field color, and fit to its XYZ under D65.
    A perfect white reflector is pinned to map exactly onto the D65 white.
    """
    grid = grid or sens.grid
    sens = spectral.resample_sensitivities(sens, grid)
    cmf = spectral.load_cmf(grid)
    d65 = spectral.load_d65(grid)
    names, chart = spectral.load_colorchecker(grid)
    white_xyz = spectral.flat_field_color(spectral.luminance_normalized(d65, cmf), cmf)

    mats, whites, rms = [], [], []
    for cct in (cct_lo, cct_hi):
        illum = spectral.blackbody_spectrum(cct, grid)
        cam_wb, xyz, white = calibration_targets(sens, illum, cmf, d65, chart)
        # a unit white reflector white-balances to |flat|/sqrt(3) * (1,1,1)
        flat = spectral.flat_field_color(spectral.luminance_normalized(illum, cmf), sens)
        neutral = (np.full(3, np.linalg.norm(flat) / np.sqrt(3.0)), white_xyz)
        m, r = calibrate_cst((cam_wb, xyz), neutral=neutral)
        mats.append(m)
        whites.append(white)
        rms.append(r)
    preset = CstPreset(mats[0], float(cct_lo), mats[1], float(cct_hi))
    prov = {"chart": "colorchecker24", "patches": len(names), "anchors_K": [cct_lo, cct_hi],
            "illuminant_model": "planck", "residual_rms": rms, "white_preserving": True}
    return CameraProfile(name, sens, preset, whites[1], prov)


def default_camera_sensitivities(grid: WavelengthGrid = spectral.DEFAULT_GRID,
                                 variant: int = 0) -> SensitivitySet:
    """Broadband Gaussian RGB stand-ins for a phone camera."""
    variants = [
        ((605.0, 540.0, 460.0), (90.0, 85.0, 75.0)),
        ((595.0, 530.0, 455.0), (80.0, 95.0, 70.0)),
    ]
    centers, fwhms = variants[variant % len(variants)]
    rows = [spectral.gaussian_sensitivities([c], f, grid).channels[0] for c, f in zip(centers, fwhms)]
    return SensitivitySet(grid, np.array(rows), ("r", "g", "b"))


# --------------------------------------------------------------- JSON I/O


def save_profile(profile: CameraProfile, path, sensitivity_csv: str | None = None) -> None:
    path = Path(path)
    if sensitivity_csv is None:
        sensitivity_csv = path.with_suffix(".sens.csv").name
    spectral.write_sensitivity_csv(profile.sensitivities, path.parent / sensitivity_csv)
    doc = {
        "name": profile.name,
        "sensitivities": sensitivity_csv,
        "m_lo": profile.cst.m_lo.reshape(-1).tolist(),
        "cct_lo": profile.cst.cct_lo,
        "m_hi": profile.cst.m_hi.reshape(-1).tolist(),
        "cct_hi": profile.cst.cct_hi,
        "white_hi": None if profile.white_hi is None else profile.white_hi.tolist(),
        "provenance": profile.provenance,
    }
    path.write_text(json.dumps(doc, indent=2))


def load_profile(path) -> CameraProfile:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        sens = spectral.read_sensitivity_csv(path.parent / doc["sensitivities"])
        preset = CstPreset(np.reshape(doc["m_lo"], (3, 3)), float(doc["cct_lo"]),
                           np.reshape(doc["m_hi"], (3, 3)), float(doc["cct_hi"]))
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, DataError):
            raise
        raise ConfigError(f"{path}: malformed camera profile ({exc})") from exc
    except OSError as exc:
        raise DataError(f"cannot read camera profile {path}: {exc.strerror or exc}") from exc
    white = doc.get("white_hi")
    return CameraProfile(doc["name"], sens, preset, None if white is None else np.asarray(white, float),
                         doc.get("provenance", {}))
