"""CIELAB conversion, color-difference and angular metrics, sRGB encoding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .spectral import PlanarImage

_DELTA = 6.0 / 29.0
_T0 = _DELTA ** 3
# hue differences within this many degrees of 180 count as exactly 180
_HUE_TIE = 1e-9


@dataclass(frozen=True)
class WhitePoint:
    Xn: float
    Yn: float
    Zn: float

    def __post_init__(self):
        if min(self.Xn, self.Yn, self.Zn) <= 0:
            raise DataError("white point components must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.Xn, self.Yn, self.Zn])

    @property
    def xy(self) -> tuple[float, float]:
        s = self.Xn + self.Yn + self.Zn
        return self.Xn / s, self.Yn / s


D65 = WhitePoint(0.95047, 1.0, 1.08883)

# linear sRGB from XYZ (IEC 61966-2-1, D65)
XYZ_TO_SRGB = np.array([
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
])


def _f(t):
    t = np.asarray(t, dtype=np.float64)
    return np.where(t > _T0, np.cbrt(t), t / (3 * _DELTA ** 2) + 4.0 / 29.0)


def _f_inv(u):
    u = np.asarray(u, dtype=np.float64)
    return np.where(u > _DELTA, u ** 3, 3 * _DELTA ** 2 * (u - 4.0 / 29.0))


def _f_prime(t):
    t = np.asarray(t, dtype=np.float64)
    safe = np.where(t > _T0, t, 1.0)
    return np.where(t > _T0, 1.0 / (3.0 * np.cbrt(safe) ** 2), 1.0 / (3 * _DELTA ** 2))


def xyz_to_lab(xyz, white: WhitePoint = D65) -> np.ndarray:
    """XYZ (..., 3) to L*a*b* (..., 3)."""
    xyz = np.asarray(xyz, dtype=np.float64)
    if not np.all(np.isfinite(xyz)):
        raise DataError("non-finite XYZ input")
    fx, fy, fz = (_f(xyz[..., i] / w) for i, w in enumerate((white.Xn, white.Yn, white.Zn)))
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_to_xyz(lab, white: WhitePoint = D65) -> np.ndarray:
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    return np.stack([white.Xn * _f_inv(fx), white.Yn * _f_inv(fy), white.Zn * _f_inv(fz)], axis=-1)


def xyz_to_lab_jacobian(xyz, white: WhitePoint = D65) -> np.ndarray:
    """d(L, a, b)/d(X, Y, Z) as (..., 3, 3)."""
    xyz = np.asarray(xyz, dtype=np.float64)
    w = white.as_array()
    d = _f_prime(xyz / w) / w  # (..., 3) diagonal of df/dxyz
    jac = np.zeros(xyz.shape + (3,))
    jac[..., 0, 1] = 116.0 * d[..., 1]
    jac[..., 1, 0] = 500.0 * d[..., 0]
    jac[..., 1, 1] = -500.0 * d[..., 1]
    jac[..., 2, 1] = 200.0 * d[..., 1]
    jac[..., 2, 2] = -200.0 * d[..., 2]
    return jac


def delta_e76(p, q) -> np.ndarray:
    diff = np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def delta_e00(p, q, kL: float = 1.0, kC: float = 1.0, kH: float = 1.0) -> np.ndarray:
    """CIEDE2000 color difference between Lab arrays of shape (..., 3).

    Hue differences of exactly 180 degrees (up to ``_HUE_TIE`` of rounding in
    atan2) take the ``<= 180`` branch.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    L1, a1, b1 = p[..., 0], p[..., 1], p[..., 2]
    L2, a2, b2 = q[..., 0], q[..., 1], q[..., 2]

    c_bar = 0.5 * (np.hypot(a1, b1) + np.hypot(a2, b2))
    c7 = c_bar ** 7
    g = 0.5 * (1.0 - np.sqrt(c7 / (c7 + 25.0 ** 7)))
    a1p = (1.0 + g) * a1
    a2p = (1.0 + g) * a2
    c1p = np.hypot(a1p, b1)
    c2p = np.hypot(a2p, b2)
    h1p = np.where(c1p == 0, 0.0, np.degrees(np.arctan2(b1, a1p)) % 360.0)
    h2p = np.where(c2p == 0, 0.0, np.degrees(np.arctan2(b2, a2p)) % 360.0)

    dLp = L2 - L1
    dCp = c2p - c1p
    dh = h2p - h1p
    chroma_zero = (c1p * c2p) == 0
    dhp = np.where(dh > 180.0 + _HUE_TIE, dh - 360.0, np.where(dh < -180.0 - _HUE_TIE, dh + 360.0, dh))
    dhp = np.where(chroma_zero, 0.0, dhp)
    dHp = 2.0 * np.sqrt(c1p * c2p) * np.sin(np.radians(dhp) / 2.0)

    Lbp = 0.5 * (L1 + L2)
    Cbp = 0.5 * (c1p + c2p)
    hsum = h1p + h2p
    hbp = np.where(
        chroma_zero,
        hsum,
        np.where(np.abs(h1p - h2p) <= 180.0 + _HUE_TIE, hsum / 2.0,
                 np.where(hsum < 360.0, (hsum + 360.0) / 2.0, (hsum - 360.0) / 2.0)),
    )

    t = (1.0 - 0.17 * np.cos(np.radians(hbp - 30.0)) + 0.24 * np.cos(np.radians(2.0 * hbp))
         + 0.32 * np.cos(np.radians(3.0 * hbp + 6.0)) - 0.20 * np.cos(np.radians(4.0 * hbp - 63.0)))
    d_theta = 30.0 * np.exp(-(((hbp - 275.0) / 25.0) ** 2))
    cb7 = Cbp ** 7
    rc = 2.0 * np.sqrt(cb7 / (cb7 + 25.0 ** 7))
    lb50 = (Lbp - 50.0) ** 2
    sl = 1.0 + 0.015 * lb50 / np.sqrt(20.0 + lb50)
    sc = 1.0 + 0.045 * Cbp
    sh = 1.0 + 0.015 * Cbp * t
    rt = -np.sin(np.radians(2.0 * d_theta)) * rc

    tl = dLp / (kL * sl)
    tc = dCp / (kC * sc)
    th = dHp / (kH * sh)
    return np.sqrt(np.maximum(tl * tl + tc * tc + th * th + rt * tc * th, 0.0))


def angular_error(u, v) -> np.ndarray:
    """Angle in degrees between vectors along the last axis."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    if np.any(nu == 0) or np.any(nv == 0):
        raise DataError("angular error undefined for zero-norm vectors")
    # 2 atan2(|a - b|, |a + b|) on unit vectors equals arccos(a . b) but stays accurate near 0 and 180
    a = u / nu[..., None]
    b = v / nv[..., None]
    return np.degrees(2.0 * np.arctan2(np.linalg.norm(a - b, axis=-1), np.linalg.norm(a + b, axis=-1)))


def reproduction_error(pred, gt) -> np.ndarray:
    """Angle between pred/gt (component-wise) and the achromatic axis."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if np.any(gt <= 0):
        raise DataError("reproduction error requires strictly positive ground truth")
    ratio = pred / gt
    return angular_error(ratio, np.ones_like(ratio))


METRICS = ("de00", "de76", "reproduction", "angular")


def per_pixel_metric(pred: np.ndarray, ref: np.ndarray, metric: str, white: WhitePoint = D65) -> np.ndarray:
    """Metric over (N, 3) pixel arrays in XYZ (ΔE metrics) or any linear space."""
    if metric == "de00":
        return delta_e00(xyz_to_lab(pred, white), xyz_to_lab(ref, white))
    if metric == "de76":
        return delta_e76(xyz_to_lab(pred, white), xyz_to_lab(ref, white))
    if metric == "reproduction":
        return reproduction_error(pred, ref)
    if metric == "angular":
        return angular_error(pred, ref)
    raise DataError(f"unknown metric {metric!r}; expected one of {METRICS}")


def metric_mask(predicted: PlanarImage, reference: PlanarImage, metric: str) -> np.ndarray:
    mask = predicted.valid_mask & reference.valid_mask
    if metric == "reproduction":
        mask = mask & np.all(reference.data > 0, axis=0) & np.any(predicted.data != 0, axis=0)
    elif metric == "angular":
        mask = mask & np.any(reference.data != 0, axis=0) & np.any(predicted.data != 0, axis=0)
    return mask


def image_metric_mean(predicted: PlanarImage, reference: PlanarImage, metric: str,
                      white: WhitePoint = D65, sequential: bool = False) -> tuple[float, int]:
    """Mean per-pixel metric over the intersected valid mask, and the pixel count.

    Pixels where the metric is undefined (zero ground truth for reproduction
    error, zero vectors for angular error) are excluded.
    ``sequential=True`` sums with ``math.fsum`` for an order-exact result.
    """
    if predicted.data.shape != reference.data.shape:
        raise DataError(f"shape mismatch {predicted.data.shape} vs {reference.data.shape}")
    if metric in ("de00", "de76") and (predicted.color_space != "xyz" or reference.color_space != "xyz"):
        raise DataError("ΔE metrics need xyz images")
    mask = metric_mask(predicted, reference, metric)
    n = int(mask.sum())
    if n == 0:
        raise DataError("empty valid mask")
    values = per_pixel_metric(predicted.data[:, mask].T, reference.data[:, mask].T, metric, white)
    total = math.fsum(values.tolist()) if sequential else float(np.sum(values))
    return total / n, n


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    linear = np.clip(linear, 0.0, 1.0)
    return np.where(linear <= 0.0031308, 12.92 * linear, 1.055 * np.power(linear, 1 / 2.4) - 0.055)


def xyz_to_srgb_encode(img: PlanarImage) -> PlanarImage:
    if img.color_space != "xyz":
        raise DataError(f"expected xyz image, got {img.color_space!r}")
    lin = np.tensordot(XYZ_TO_SRGB, img.data, axes=(1, 0))
    return PlanarImage(srgb_encode(lin), "srgb-encoded", img.valid_mask)


def xy_chromaticity(xyz) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=np.float64)
    s = xyz.sum(axis=-1, keepdims=True)
    return xyz[..., :2] / s
