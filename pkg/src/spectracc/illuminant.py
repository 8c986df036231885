"""Minkowski-norm statistical illuminant estimation.

Every estimator is an instance of

    e_c  ∝  ( mean_{valid x} |D^{n,σ} I_c(x)|^p )^{1/p}

with ``n`` the Gaussian-derivative order, ``σ`` the smoothing scale and ``p``
the Minkowski norm (``p = inf`` takes the per-channel max). Gray-World,
White-Patch, Shades-of-Gray, general Gray-World and both Gray-Edge variants
are named presets of this family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, DegenerateEstimateError
from .spectral import PlanarImage


@dataclass(frozen=True)
class EstimatorSpec:
    order: int = 0
    p: float = 1.0
    sigma: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if self.order not in (0, 1, 2):
            raise ConfigError(f"derivative order must be 0, 1 or 2, got {self.order}")
        if not (self.p >= 1 or math.isinf(self.p)):
            raise ConfigError(f"Minkowski p must be >= 1 or inf, got {self.p}")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.sigma == 0 and self.order != 0:
            raise ConfigError("derivative estimators need sigma > 0")

    def as_dict(self) -> dict:
        return {"name": self.name, "order": self.order,
                "p": "inf" if math.isinf(self.p) else self.p, "sigma": self.sigma}


PRESETS = {
    "gw": EstimatorSpec(0, 1.0, 0.0, "gw"),
    "wp": EstimatorSpec(0, math.inf, 0.0, "wp"),
    "sog": EstimatorSpec(0, 4.0, 0.0, "sog"),
    "ggw": EstimatorSpec(0, 4.0, 9.0, "ggw"),
    "ge1": EstimatorSpec(1, 1.0, 6.0, "ge1"),
    "ge2": EstimatorSpec(2, 1.0, 1.0, "ge2"),
}


def estimator(name: str, p: float | None = None, sigma: float | None = None,
              order: int | None = None) -> EstimatorSpec:
    """Look up a preset by name and apply optional overrides."""
    try:
        spec = PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown estimator {name!r}; choose from {sorted(PRESETS)}") from None
    overrides = {k: v for k, v in (("p", p), ("sigma", sigma), ("order", order)) if v is not None}
    return replace(spec, **overrides) if overrides else spec


@dataclass(frozen=True)
class IlluminantEstimate:
    rgb: np.ndarray
    raw_magnitude: float

    @classmethod
    def from_vector(cls, v) -> "IlluminantEstimate":
        v = np.asarray(v, dtype=np.float64)
        norm = float(np.linalg.norm(v))
        if norm == 0 or not np.isfinite(norm):
            raise DegenerateEstimateError("illuminant vector has zero or non-finite norm")
        return cls(v / norm, norm)


def gaussian_kernels(sigma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sampled Gaussian and its first two derivatives, radius ceil(3σ).

    Truncation breaks the continuous moment identities, so the derivative
    taps are renormalized: g1 has first moment -1, g2 has zero sum and
    second moment 2. Constants then give exactly 0 and ramps / parabolas
    their exact slope / curvature.
    """
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    g1 = -x / sigma ** 2 * g
    g1 /= -np.sum(x * g1)
    g2 = (x ** 2 / sigma ** 4 - 1.0 / sigma ** 2) * g
    g2 -= g * g2.sum()
    g2 *= 2.0 / np.sum(x * x * g2)
    return g, g1, g2


def gaussian_derivative(img: PlanarImage, sigma: float, order: int) -> PlanarImage:
    """Per-channel Gaussian smoothing (order 0) or derivative magnitude (1, 2).

    Borders replicate the edge pixel.
    """
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    if order not in (0, 1, 2):
        raise ConfigError(f"order must be 0, 1 or 2, got {order}")
    if order > 0 and sigma == 0:
        raise ConfigError("derivative filtering requires sigma > 0")
    if sigma == 0:
        return img
    g, g1, g2 = gaussian_kernels(sigma)

    def sep(plane, ky, kx):
        tmp = ndimage.convolve1d(plane, ky, axis=0, mode="nearest")
        return ndimage.convolve1d(tmp, kx, axis=1, mode="nearest")

    out = np.empty_like(img.data)
    for c, plane in enumerate(img.data):
        if order == 0:
            out[c] = sep(plane, g, g)
        elif order == 1:
            gx = sep(plane, g, g1)
            gy = sep(plane, g1, g)
            out[c] = np.sqrt(gx * gx + gy * gy)
        else:
            gxx = sep(plane, g, g2)
            gyy = sep(plane, g2, g)
            gxy = sep(plane, g1, g1)
            out[c] = np.sqrt(gxx * gxx + 2 * gxy * gxy + gyy * gyy)
    return img.replace(data=out)


def minkowski_response(img: PlanarImage, spec: EstimatorSpec,
                       saturation: float | None = None) -> np.ndarray:
    """Per-channel Minkowski mean of the filtered absolute response.

    ``saturation``: drop pixels where any channel reaches this level before
    filtering. None keeps every valid pixel (needed for exact scale covariance).
    """
    mask = img.valid_mask
    if saturation is not None:
        mask = mask & np.all(img.data < saturation, axis=0)
    if not mask.any():
        raise DataError("no valid pixels for illuminant estimation")
    filtered = gaussian_derivative(img, spec.sigma, spec.order)
    vals = np.abs(filtered.data[:, mask])  # (C, N)
    if math.isinf(spec.p):
        return vals.max(axis=1)
    if spec.p == 1:
        return vals.mean(axis=1)
    return np.mean(vals ** spec.p, axis=1) ** (1.0 / spec.p)


def minkowski_estimate(img: PlanarImage, spec: EstimatorSpec,
                       saturation: float | None = None) -> IlluminantEstimate:
    if img.color_space != "camera-raw":
        raise DataError(f"illuminant estimation expects camera-raw input, got {img.color_space!r}")
    resp = minkowski_response(img, spec, saturation)
    if not np.any(resp > 0):
        raise DegenerateEstimateError(f"{spec.name}: all-zero response, scene is degenerate")
    return IlluminantEstimate.from_vector(resp)
