"""Wavelength grids, spectra, and the discretized image-formation model.

A pixel's response in channel ``c`` is

    I_c(x, y) = sum_b R_b(x, y) * E_b * S_{c,b} * step

i.e. the rectangle rule on a uniform wavelength grid. All arrays are float64
in memory; file formats narrow to float32.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, GridMismatchError

LINEAR_SPACES = ("camera-raw", "ms-raw", "xyz")
COLOR_SPACES = ("camera-raw", "ms-raw", "xyz", "lab", "srgb-encoded")

# second radiation constant, m*K
_C2 = 1.4387769e-2


@dataclass(frozen=True)
class WavelengthGrid:
    lambda_min: float = 400.0
    lambda_max: float = 700.0
    step: float = 10.0

    def __post_init__(self):
        if not self.lambda_min < self.lambda_max:
            raise DataError(f"lambda_min {self.lambda_min} must be < lambda_max {self.lambda_max}")
        if self.step <= 0:
            raise DataError(f"grid step must be positive, got {self.step}")
        span = (self.lambda_max - self.lambda_min) / self.step
        if abs(span - round(span)) > 1e-6:
            raise DataError("grid span is not a whole number of steps")

    @property
    def count(self) -> int:
        return int(round((self.lambda_max - self.lambda_min) / self.step)) + 1

    @property
    def wavelengths(self) -> np.ndarray:
        return self.lambda_min + self.step * np.arange(self.count)

    @classmethod
    def single(cls, wavelength: float, step: float) -> "WavelengthGrid":
        """One-band grid; ``lambda_max`` is only nominal so the span check passes."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "lambda_min", float(wavelength))
        object.__setattr__(obj, "lambda_max", float(wavelength))
        object.__setattr__(obj, "step", float(step))
        return obj


DEFAULT_GRID = WavelengthGrid(400.0, 700.0, 10.0)


def _same_grid(a: WavelengthGrid, b: WavelengthGrid) -> bool:
    return a.count == b.count and np.allclose(a.wavelengths, b.wavelengths, rtol=0, atol=1e-9) \
        and abs(a.step - b.step) < 1e-12


@dataclass(frozen=True)
class Spectrum:
    grid: WavelengthGrid
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.size != self.grid.count:
            raise DataError(f"spectrum has {v.size} samples, grid expects {self.grid.count}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DataError("spectrum values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def scaled(self, factor: float) -> "Spectrum":
        return Spectrum(self.grid, self.values * factor, self.name)


@dataclass(frozen=True)
class SensitivitySet:
    grid: WavelengthGrid
    channels: np.ndarray  # (C, B)
    channel_names: tuple[str, ...] = ()

    def __post_init__(self):
        ch = np.atleast_2d(np.asarray(self.channels, dtype=np.float64))
        if ch.shape[1] != self.grid.count:
            raise DataError(f"sensitivities have {ch.shape[1]} samples, grid expects {self.grid.count}")
        if not np.all(np.isfinite(ch)) or np.any(ch < 0):
            raise DataError("sensitivities must be finite and non-negative")
        if np.any(ch.max(axis=1) <= 0):
            raise DataError("every channel needs at least one positive sample")
        names = tuple(self.channel_names) or tuple(f"ch{i}" for i in range(ch.shape[0]))
        if len(names) != ch.shape[0]:
            raise DataError("channel_names length does not match channel count")
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "channel_names", names)

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]


@dataclass(frozen=True)
class ReflectanceCube:
    grid: WavelengthGrid
    planes: np.ndarray  # (B, H, W)
    valid_mask: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.planes, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != self.grid.count:
            raise DataError(f"cube must be (B={self.grid.count}, H, W), got {p.shape}")
        mask = np.ones(p.shape[1:], bool) if self.valid_mask is None else np.asarray(self.valid_mask, bool)
        if mask.shape != p.shape[1:]:
            raise DataError("mask shape does not match cube")
        if not np.all(np.isfinite(p)):
            raise DataError("cube contains non-finite values")
        vals = p[:, mask]
        if vals.size and (vals.min() < 0 or vals.max() > 1):
            raise DataError("reflectance outside [0, 1] on valid pixels")
        p.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "planes", p)
        object.__setattr__(self, "valid_mask", mask)

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]


@dataclass(frozen=True)
class PlanarImage:
    data: np.ndarray  # (C, H, W)
    color_space: str = "camera-raw"
    valid_mask: np.ndarray | None = None

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3:
            raise DataError(f"image data must be (C, H, W), got shape {d.shape}")
        if self.color_space not in COLOR_SPACES:
            raise DataError(f"unknown color space {self.color_space!r}")
        mask = np.ones(d.shape[1:], bool) if self.valid_mask is None else np.asarray(self.valid_mask, bool)
        if mask.shape != d.shape[1:]:
            raise DataError("mask shape does not match image")
        d.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "valid_mask", mask)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def replace(self, data=None, color_space=None, valid_mask=None) -> "PlanarImage":
        return PlanarImage(
            self.data if data is None else data,
            self.color_space if color_space is None else color_space,
            self.valid_mask if valid_mask is None else valid_mask,
        )

    def pixels(self) -> np.ndarray:
        """Valid pixels as an (N, C) array."""
        return self.data[:, self.valid_mask].T


def resample_spectrum(spec: Spectrum, target: WavelengthGrid) -> Spectrum:
    return Spectrum(target, _resample(spec.grid, spec.values, target), spec.name)


def resample_sensitivities(sens: SensitivitySet, target: WavelengthGrid) -> SensitivitySet:
    rows = [_resample(sens.grid, ch, target) for ch in sens.channels]
    return SensitivitySet(target, np.array(rows), sens.channel_names)


def resample_cube(cube: "ReflectanceCube", target: WavelengthGrid) -> "ReflectanceCube":
    """Band-wise linear resampling of a cube, same edge clamping as the spectra."""
    eye = np.eye(cube.grid.count)
    weights = np.stack([_resample(cube.grid, e, target) for e in eye], axis=1)
    return ReflectanceCube(target, np.tensordot(weights, cube.planes, axes=(1, 0)), cube.valid_mask)


def _resample(grid: WavelengthGrid, values: np.ndarray, target: WavelengthGrid) -> np.ndarray:
    src = grid.wavelengths
    dst = target.wavelengths
    if dst[-1] < src[0] or dst[0] > src[-1]:
        raise DataError(
            f"no overlap between source [{src[0]}, {src[-1]}] and target [{dst[0]}, {dst[-1]}] nm"
        )
    # np.interp clamps to the edge values outside the source range
    return np.interp(dst, src, values)


def _check_grids(*grids: WavelengthGrid) -> None:
    first = grids[0]
    for g in grids[1:]:
        if not _same_grid(first, g):
            raise GridMismatchError(f"grid mismatch: {first} vs {g}; resample first")


def render_image(cube: ReflectanceCube, illum: Spectrum, sens: SensitivitySet,
                 color_space: str = "camera-raw") -> PlanarImage:
    _check_grids(cube.grid, illum.grid, sens.grid)
    weights = sens.channels * illum.values[None, :] * cube.grid.step  # (C, B)
    data = np.tensordot(weights, cube.planes, axes=(1, 0))
    return PlanarImage(data, color_space, cube.valid_mask)


def flat_field_color(illum: Spectrum, sens: SensitivitySet) -> np.ndarray:
    """Camera response to a perfect white reflector."""
    _check_grids(illum.grid, sens.grid)
    return sens.channels @ illum.values * illum.grid.step


def downsample_area(img: PlanarImage, factor: int) -> PlanarImage:
    if factor < 1 or int(factor) != factor:
        raise DataError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    c, h, w = img.data.shape
    if h % factor or w % factor:
        raise DataError(f"{h}x{w} image is not divisible by factor {factor}")
    if factor == 1:
        return img
    blocks = img.data.reshape(c, h // factor, factor, w // factor, factor)
    data = blocks.mean(axis=(2, 4))
    mask = img.valid_mask.reshape(h // factor, factor, w // factor, factor).all(axis=(1, 3))
    return PlanarImage(data, img.color_space, mask)


def scale_exposure(img: PlanarImage, alpha: float) -> PlanarImage:
    if not alpha > 0:
        raise DataError(f"exposure factor must be positive, got {alpha}")
    if img.color_space not in LINEAR_SPACES:
        raise DataError(f"cannot scale exposure of non-linear space {img.color_space!r}")
    if alpha == 1:
        return img
    return img.replace(data=img.data * alpha)


def blackbody_spectrum(cct: float, grid: WavelengthGrid = DEFAULT_GRID) -> Spectrum:
    """Planck's law, normalized to 1 at 560 nm."""
    lam = grid.wavelengths * 1e-9

    def planck(lam_m):
        return lam_m ** -5 / np.expm1(_C2 / (lam_m * cct))

    values = planck(lam) / planck(560e-9)
    return Spectrum(grid, values, f"planck_{int(round(cct))}K")


# ---------------------------------------------------------------- CSV I/O


def _read_table(path) -> tuple[list[str], np.ndarray]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except (StopIteration, ValueError) as exc:
        raise DataError(f"{path}: malformed CSV ({exc})") from exc
    table = np.array(rows, dtype=np.float64)
    if table.ndim != 2 or table.shape[1] != len(header):
        raise DataError(f"{path}: ragged CSV table")
    return header, table


def _grid_from_wavelengths(wl: np.ndarray, path) -> WavelengthGrid:
    if np.any(np.diff(wl) <= 0):
        raise DataError(f"{path}: wavelengths must be strictly increasing")
    steps = np.diff(wl)
    if len(wl) > 1 and not np.allclose(steps, steps[0]):
        raise DataError(f"{path}: wavelengths must be uniformly spaced")
    if len(wl) == 1:
        return WavelengthGrid.single(wl[0], 1.0)
    return WavelengthGrid(float(wl[0]), float(wl[-1]), float(steps[0]))


def read_spectrum_csv(path, name: str | None = None) -> Spectrum:
    header, table = _read_table(path)
    if header[:1] != ["wavelength_nm"] or len(header) != 2:
        raise DataError(f"{path}: expected header 'wavelength_nm,value'")
    grid = _grid_from_wavelengths(table[:, 0], path)
    return Spectrum(grid, table[:, 1], name or Path(path).stem)


def write_spectrum_csv(spec: Spectrum, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["wavelength_nm", "value"])
        for lam, v in zip(spec.grid.wavelengths, spec.values):
            w.writerow([f"{lam:g}", repr(float(v))])


def read_sensitivity_csv(path) -> SensitivitySet:
    header, table = _read_table(path)
    if header[0] != "wavelength_nm" or len(header) < 2:
        raise DataError(f"{path}: expected header 'wavelength_nm,ch0,ch1,...'")
    grid = _grid_from_wavelengths(table[:, 0], path)
    return SensitivitySet(grid, table[:, 1:].T, tuple(header[1:]))


def write_sensitivity_csv(sens: SensitivitySet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["wavelength_nm", *sens.channel_names])
        for i, lam in enumerate(sens.grid.wavelengths):
            w.writerow([f"{lam:g}", *(repr(float(v)) for v in sens.channels[:, i])])


def _asset(name: str):
    return resources.files("spectracc") / "data" / name


def load_cmf(grid: WavelengthGrid = DEFAULT_GRID) -> SensitivitySet:
    """CIE 1931 2-degree color-matching functions."""
    with resources.as_file(_asset("cie1931_2deg.csv")) as p:
        return resample_sensitivities(read_sensitivity_csv(p), grid)


def load_d65(grid: WavelengthGrid = DEFAULT_GRID) -> Spectrum:
    with resources.as_file(_asset("cie_d65.csv")) as p:
        return resample_spectrum(read_spectrum_csv(p, "D65"), grid)


def load_colorchecker(grid: WavelengthGrid = DEFAULT_GRID) -> tuple[tuple[str, ...], np.ndarray]:
    """24-patch chart reflectances as (names, (24, B) array)."""
    with resources.as_file(_asset("colorchecker24.csv")) as p:
        sens = resample_sensitivities(read_sensitivity_csv(p), grid)
    return sens.channel_names, np.asarray(sens.channels)


def luminance_normalized(illum: Spectrum, cmf: SensitivitySet) -> Spectrum:
    """Scale an SPD so a perfect white reflector has Y = 1."""
    y = flat_field_color(illum, cmf)[1]
    if y <= 0:
        raise DataError(f"illuminant {illum.name!r} has zero luminance")
    return illum.scaled(1.0 / y)


def gaussian_sensitivities(centers: Sequence[float], fwhm: float,
                           grid: WavelengthGrid = DEFAULT_GRID, prefix: str = "ms") -> SensitivitySet:
    sigma = fwhm / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    lam = grid.wavelengths
    ch = np.exp(-0.5 * ((lam[None, :] - np.asarray(centers, float)[:, None]) / sigma) ** 2)
    return SensitivitySet(grid, ch, tuple(f"{prefix}{int(round(c))}" for c in centers))
