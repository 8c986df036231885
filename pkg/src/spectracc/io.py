"""Binary cube/image formats, triplet sidecars, manifests and PNG export.

HSC1 (little-endian)::

    b"HSC1" | u32 H | u32 W | u32 B | f32 lambda_min_nm | f32 step_nm
    | B planes of H*W f32 | H*W u8 mask

MCI1 (little-endian)::

    b"MCI1" | u32 H | u32 W | u32 C | u8 color-space code
    | C planes of H*W f32 | H*W u8 mask
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, TruncationError
from .spectral import PlanarImage, ReflectanceCube, WavelengthGrid

HSC_MAGIC = b"HSC1"
MCI_MAGIC = b"MCI1"
SPACE_CODES = {"camera-raw": 0, "ms-raw": 1, "xyz": 2, "lab": 3, "srgb-encoded": 4}
CODE_SPACES = {v: k for k, v in SPACE_CODES.items()}

_HSC_HEADER = struct.Struct("<4sIIIff")
_MCI_HEADER = struct.Struct("<4sIIIB")


def _check_magic(found: bytes, expected: bytes, path) -> None:
    if found != expected:
        raise FormatError(f"{path}: bad magic, expected {expected!r}, found {found!r}")


def _read_exact(buf: memoryview, offset: int, n: int, path, what: str) -> memoryview:
    if offset + n > len(buf):
        raise TruncationError(f"{path}: truncated while reading {what} "
                              f"(need {offset + n} bytes, file has {len(buf)})")
    return buf[offset:offset + n]


def encode_cube(cube: ReflectanceCube) -> bytes:
    b, h, w = cube.planes.shape
    head = _HSC_HEADER.pack(HSC_MAGIC, h, w, b, cube.grid.lambda_min, cube.grid.step)
    payload = np.ascontiguousarray(cube.planes, dtype="<f4").tobytes()
    mask = np.ascontiguousarray(cube.valid_mask, dtype=np.uint8).tobytes()
    return head + payload + mask


def decode_cube(data: bytes, path="<bytes>") -> ReflectanceCube:
    buf = memoryview(data)
    if len(buf) >= 4:
        _check_magic(bytes(buf[:4]), HSC_MAGIC, path)
    head = _read_exact(buf, 0, _HSC_HEADER.size, path, "header")
    magic, h, w, b, lam0, step = _HSC_HEADER.unpack(head)
    _check_magic(magic, HSC_MAGIC, path)
    off = _HSC_HEADER.size
    n = b * h * w
    planes = np.frombuffer(_read_exact(buf, off, 4 * n, path, "planes"), dtype="<f4").reshape(b, h, w)
    off += 4 * n
    mask = np.frombuffer(_read_exact(buf, off, h * w, path, "mask"), dtype=np.uint8).reshape(h, w)
    if not np.all(np.isfinite(planes)):
        raise FormatError(f"{path}: non-finite values in cube payload")
    if b == 1:
        grid = WavelengthGrid.single(float(lam0), float(step))
    else:
        grid = WavelengthGrid(float(lam0), float(lam0) + float(step) * (b - 1), float(step))
    return ReflectanceCube(grid, planes.astype(np.float64), mask.astype(bool))


def encode_image(img: PlanarImage) -> bytes:
    c, h, w = img.data.shape
    head = _MCI_HEADER.pack(MCI_MAGIC, h, w, c, SPACE_CODES[img.color_space])
    payload = np.ascontiguousarray(img.data, dtype="<f4").tobytes()
    mask = np.ascontiguousarray(img.valid_mask, dtype=np.uint8).tobytes()
    return head + payload + mask


def decode_image(data: bytes, path="<bytes>") -> PlanarImage:
    buf = memoryview(data)
    if len(buf) >= 4:
        _check_magic(bytes(buf[:4]), MCI_MAGIC, path)
    head = _read_exact(buf, 0, _MCI_HEADER.size, path, "header")
    magic, h, w, c, code = _MCI_HEADER.unpack(head)
    _check_magic(magic, MCI_MAGIC, path)
    if code not in CODE_SPACES:
        raise FormatError(f"{path}: unknown color-space code {code}")
    off = _MCI_HEADER.size
    n = c * h * w
    planes = np.frombuffer(_read_exact(buf, off, 4 * n, path, "planes"), dtype="<f4").reshape(c, h, w)
    off += 4 * n
    mask = np.frombuffer(_read_exact(buf, off, h * w, path, "mask"), dtype=np.uint8).reshape(h, w)
    if not np.all(np.isfinite(planes)):
        raise FormatError(f"{path}: non-finite values in image payload")
    return PlanarImage(planes.astype(np.float64), CODE_SPACES[code], mask.astype(bool))


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc


def save_cube(cube: ReflectanceCube, path) -> None:
    Path(path).write_bytes(encode_cube(cube))


def load_cube(path) -> ReflectanceCube:
    return decode_cube(_read_bytes(path), path)


def save_image(img: PlanarImage, path) -> None:
    Path(path).write_bytes(encode_image(img))


def load_image(path) -> PlanarImage:
    return decode_image(_read_bytes(path), path)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(_read_bytes(path))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def export_png16(img: PlanarImage, path) -> None:
    """Write a 3-channel srgb-encoded image as 16-bit PNG."""
    import cv2

    if img.color_space != "srgb-encoded" or img.n_channels != 3:
        raise FormatError("16-bit PNG export needs a 3-channel srgb-encoded image")
    rgb = np.clip(np.moveaxis(img.data, 0, -1), 0.0, 1.0)
    u16 = np.round(rgb * 65535.0).astype(np.uint16)
    if not cv2.imwrite(str(path), u16[..., ::-1]):
        raise FormatError(f"failed to write {path}")
