"""Pointwise dual-input KAN color mapper with hand-written gradients.

Features are the squashed camera RGB concatenated with a learned linear
projection (the spectral encoder) of the co-located MS sample. A single KAN
layer maps the D = 3 + K features to XYZ:

    y_q = bias_q + sum_j [ bypass_qj * x_j + sum_i coeffs_qji * B_i(x_j) ]

with cubic B-splines on a clamped 5-interval knot vector over [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .colorimetry import D65, WhitePoint, delta_e76, xyz_to_lab, xyz_to_lab_jacobian
from .errors import ConfigError

SPLINE_ORDER = 3
GRID_SIZE = 5
N_BASIS = GRID_SIZE + SPLINE_ORDER
GROUPS = ("ms_encoder", "spline", "bypass", "bias")


def clamped_knots(grid_size: int = GRID_SIZE, k: int = SPLINE_ORDER) -> np.ndarray:
    inner = np.linspace(0.0, 1.0, grid_size + 1)
    return np.concatenate([np.zeros(k), inner, np.ones(k)])


def _local(x: np.ndarray, knots: np.ndarray, k: int):
    x2 = np.ascontiguousarray(np.asarray(x, dtype=np.float64).reshape(-1, x.shape[-1] if x.ndim else 1))
    return _kernels.local_basis(x2, np.ascontiguousarray(knots, dtype=np.float64), k)


def bspline_basis(x, knots: np.ndarray | None = None, k: int = SPLINE_ORDER) -> np.ndarray:
    """B-spline basis values, shape x.shape + (len(knots) - k - 1,). Inputs are clamped to the knot span."""
    return bspline_basis_with_derivative(x, knots, k)[0]


def bspline_basis_with_derivative(x, knots: np.ndarray | None = None,
                                  k: int = SPLINE_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Basis values and their x-derivatives (zero outside the knot span)."""
    knots = clamped_knots() if knots is None else np.asarray(knots, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    first, vals, ders = _local(x, knots, k)
    n_basis = len(knots) - k - 1
    dense_v = np.zeros(first.shape + (n_basis,))
    dense_d = np.zeros_like(dense_v)
    idx = first[..., None] + np.arange(k + 1)
    np.put_along_axis(dense_v, idx, vals, axis=-1)
    np.put_along_axis(dense_d, idx, ders, axis=-1)
    shape = x.shape + (n_basis,)
    return dense_v.reshape(shape), dense_d.reshape(shape)


@dataclass
class KanParams:
    ms_encoder: np.ndarray  # (K, C_ms)
    spline_coeffs: np.ndarray  # (3, D, N_BASIS)
    bypass: np.ndarray  # (3, D)
    bias: np.ndarray  # (3,)
    knots: np.ndarray = field(default_factory=clamped_knots)
    order: int = SPLINE_ORDER

    def __post_init__(self):
        self.ms_encoder = np.atleast_2d(np.asarray(self.ms_encoder, dtype=np.float64))
        self.spline_coeffs = np.asarray(self.spline_coeffs, dtype=np.float64)
        self.bypass = np.asarray(self.bypass, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.knots = np.asarray(self.knots, dtype=np.float64)
        d = self.n_features
        n_basis = len(self.knots) - self.order - 1
        if self.spline_coeffs.shape != (3, d, n_basis):
            raise ConfigError(f"spline_coeffs shape {self.spline_coeffs.shape} != {(3, d, n_basis)}")
        if self.bypass.shape != (3, d) or self.bias.shape != (3,):
            raise ConfigError("bypass must be (3, D) and bias (3,)")
        if np.any(np.diff(self.knots) < 0):
            raise ConfigError("knot vector must be non-decreasing")

    @property
    def n_spectral(self) -> int:
        return self.ms_encoder.shape[0]

    @property
    def n_ms_channels(self) -> int:
        return self.ms_encoder.shape[1]

    @property
    def n_features(self) -> int:
        return 3 + self.n_spectral

    def groups(self) -> dict[str, np.ndarray]:
        return {"ms_encoder": self.ms_encoder, "spline": self.spline_coeffs,
                "bypass": self.bypass, "bias": self.bias}

    def copy(self) -> "KanParams":
        return KanParams(self.ms_encoder.copy(), self.spline_coeffs.copy(), self.bypass.copy(),
                         self.bias.copy(), self.knots.copy(), self.order)

    def n_parameters(self) -> int:
        return sum(a.size for a in self.groups().values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.groups().values())


def init_params(n_ms_channels: int = 15, n_spectral: int = 6, seed: int = 0) -> KanParams:
    """Small random splines, identity-like bypass on the RGB inputs, non-negative encoder."""
    rng = np.random.default_rng(seed)
    d = 3 + n_spectral
    encoder = rng.uniform(0.0, 2.0 / max(n_ms_channels, 1), size=(n_spectral, n_ms_channels))
    coeffs = rng.normal(0.0, 0.01, size=(3, d, N_BASIS))
    bypass = np.zeros((3, d))
    bypass[:, :3] = np.eye(3)
    bypass[:, 3:] = rng.normal(0.0, 0.01, size=(3, n_spectral))
    return KanParams(encoder, coeffs, bypass, np.zeros(3))


def squash(z):
    """x / (1 + x) on the non-negative part; negative inputs map to 0."""
    z = np.maximum(np.asarray(z, dtype=np.float64), 0.0)
    return z / (1.0 + z)


def squash_grad(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z > 0, 1.0 / (1.0 + np.maximum(z, 0.0)) ** 2, 0.0)


def build_features(rgb, ms_context, params: KanParams) -> np.ndarray:
    """(N, 3) rgb and (N, C_ms) MS samples to (N, 3 + K) features in [0, 1)."""
    rgb = np.atleast_2d(np.asarray(rgb, dtype=np.float64))
    ms = np.atleast_2d(np.asarray(ms_context, dtype=np.float64))
    z = ms @ params.ms_encoder.T
    return np.concatenate([squash(rgb), squash(z)], axis=-1)


def spline_locals(params: KanParams, features):
    """Precomputed local basis for ``features``; pass to forward/backward to skip recomputation."""
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(features, dtype=np.float64)))
    return _local(x, params.knots, params.order)


def kan_forward(params: KanParams, features, local=None) -> np.ndarray:
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(features, dtype=np.float64)))
    first, vals, _ = local if local is not None else _local(x, params.knots, params.order)
    return _kernels.forward(x, first, vals, params.spline_coeffs, params.bypass, params.bias)


@dataclass
class KanGrads:
    ms_encoder: np.ndarray
    spline: np.ndarray
    bypass: np.ndarray
    bias: np.ndarray
    features: np.ndarray

    def groups(self) -> dict[str, np.ndarray]:
        return {"ms_encoder": self.ms_encoder, "spline": self.spline, "bypass": self.bypass, "bias": self.bias}


def kan_backward(params: KanParams, features, upstream, ms_context=None, local=None) -> KanGrads:
    """Gradients of sum_n upstream[n] . y[n] w.r.t. parameters and features.

    The encoder gradient needs the raw MS samples ``ms_context``; without them
    it is returned as zeros.
    """
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(features, dtype=np.float64)))
    g = np.ascontiguousarray(np.atleast_2d(np.asarray(upstream, dtype=np.float64)))
    first, vals, ders = local if local is not None else _local(x, params.knots, params.order)
    d_coeffs, d_bypass, d_bias, d_x = _kernels.backward(x, first, vals, ders, g, params.spline_coeffs,
                                                        params.bypass)
    d_enc = np.zeros_like(params.ms_encoder)
    if ms_context is not None and params.n_spectral:
        ms = np.atleast_2d(np.asarray(ms_context, dtype=np.float64))
        z = ms @ params.ms_encoder.T
        d_z = d_x[:, 3:] * squash_grad(z)
        d_enc = d_z.T @ ms
    return KanGrads(d_enc, d_coeffs, d_bypass, d_bias, d_x)


def loss_de76(pred_xyz, gt_xyz, white: WhitePoint = D65) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel ΔE76 between XYZ arrays and its gradient w.r.t. ``pred_xyz``.

    Where pred equals gt the (sub)gradient is 0.
    """
    pred = np.atleast_2d(np.asarray(pred_xyz, dtype=np.float64))
    gt = np.atleast_2d(np.asarray(gt_xyz, dtype=np.float64))
    lab_p = xyz_to_lab(pred, white)
    lab_g = xyz_to_lab(gt, white)
    diff = lab_p - lab_g
    dist = delta_e76(lab_p, lab_g)
    jac = xyz_to_lab_jacobian(pred, white)  # (N, 3, 3)
    safe = np.where(dist > 0, dist, 1.0)
    unit = np.where((dist > 0)[:, None], diff / safe[:, None], 0.0)
    grad = np.einsum("ni,nij->nj", unit, jac)
    return dist, grad
