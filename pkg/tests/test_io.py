import struct

import cv2
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spectracc import io
from spectracc.errors import DataError, FormatError, TruncationError
from spectracc.spectral import PlanarImage, ReflectanceCube, WavelengthGrid

f32 = st.floats(0, 1, width=32)


def cube_fixture(rng, bands=4, h=3, w=5):
    planes = rng.uniform(0, 1, (bands, h, w)).astype(np.float32).astype(np.float64)
    mask = rng.uniform(size=(h, w)) > 0.3
    return ReflectanceCube(WavelengthGrid(400, 400 + 10 * (bands - 1), 10), planes, mask)


class TestCube:
    def test_round_trip(self, rng, tmp_path):
        cube = cube_fixture(rng)
        io.save_cube(cube, tmp_path / "c.hsc")
        back = io.load_cube(tmp_path / "c.hsc")
        assert np.array_equal(back.planes, cube.planes) and np.array_equal(back.valid_mask, cube.valid_mask)
        assert back.grid.lambda_min == 400 and back.grid.step == 10 and back.grid.count == 4

    def test_layout(self, rng):
        cube = cube_fixture(rng, 2, 2, 3)
        blob = io.encode_cube(cube)
        magic, h, w, b, lam0, step = struct.unpack_from("<4sIIIff", blob)
        assert (magic, h, w, b, lam0, step) == (b"HSC1", 2, 3, 2, 400.0, 10.0)
        assert len(blob) == 24 + 4 * 12 + 6
        first = struct.unpack_from("<f", blob, 24)[0]
        assert first == np.float32(cube.planes[0, 0, 0])

    def test_single_band(self, tmp_path):
        cube = ReflectanceCube(WavelengthGrid.single(550, 10), np.full((1, 2, 2), 0.5))
        io.save_cube(cube, tmp_path / "s.hsc")
        assert io.load_cube(tmp_path / "s.hsc").grid.count == 1

    def test_bad_magic(self, rng):
        blob = b"XXXX" + io.encode_cube(cube_fixture(rng))[4:]
        with pytest.raises(FormatError, match="HSC1.*XXXX"):
            io.decode_cube(blob)

    @pytest.mark.parametrize("cut", [3, 10, 30, -1])
    def test_truncated(self, rng, cut):
        blob = io.encode_cube(cube_fixture(rng))
        with pytest.raises((TruncationError, FormatError)):
            io.decode_cube(blob[:cut])
        if cut >= 24:
            with pytest.raises(TruncationError):
                io.decode_cube(blob[:cut])

    def test_nan_payload(self, rng):
        blob = bytearray(io.encode_cube(cube_fixture(rng)))
        struct.pack_into("<f", blob, 24, float("nan"))
        with pytest.raises(FormatError):
            io.decode_cube(bytes(blob))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            io.load_cube(tmp_path / "none.hsc")


class TestImage:
    @given(arrays(np.float32, (3, 2, 4), elements=f32), st.sampled_from(sorted(io.SPACE_CODES)))
    def test_round_trip(self, data, space):
        img = PlanarImage(data.astype(np.float64), space)
        back = io.decode_image(io.encode_image(img))
        assert np.array_equal(back.data, img.data) and back.color_space == space
        assert back.valid_mask.all()

    def test_space_codes(self):
        assert io.SPACE_CODES == {"camera-raw": 0, "ms-raw": 1, "xyz": 2, "lab": 3, "srgb-encoded": 4}

    def test_bad_magic(self):
        blob = io.encode_image(PlanarImage(np.ones((1, 1, 1))))
        with pytest.raises(FormatError, match="MCI1"):
            io.decode_image(b"HSC1" + blob[4:])

    def test_unknown_code(self):
        blob = bytearray(io.encode_image(PlanarImage(np.ones((1, 1, 1)))))
        blob[16] = 9
        with pytest.raises(FormatError):
            io.decode_image(bytes(blob))

    def test_truncated(self):
        blob = io.encode_image(PlanarImage(np.ones((2, 3, 3))))
        with pytest.raises(TruncationError):
            io.decode_image(blob[:-2])


class TestJsonAndPng:
    def test_json(self, tmp_path):
        io.write_json({"b": 1, "a": [1.5]}, tmp_path / "x.json")
        assert io.read_json(tmp_path / "x.json") == {"a": [1.5], "b": 1}
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(FormatError):
            io.read_json(tmp_path / "bad.json")

    def test_png16(self, tmp_path):
        data = np.zeros((3, 2, 2))
        data[0, 0, 0], data[1, 1, 1], data[2, 0, 1] = 1.0, 0.5, 2.0
        io.export_png16(PlanarImage(data, "srgb-encoded"), tmp_path / "o.png")
        back = cv2.imread(str(tmp_path / "o.png"), cv2.IMREAD_UNCHANGED)
        assert back.dtype == np.uint16 and back.shape == (2, 2, 3)
        assert back[0, 0, 2] == 65535 and back[1, 1, 1] == 32768 and back[0, 1, 0] == 65535

    def test_png_wrong_space(self, tmp_path):
        with pytest.raises(FormatError):
            io.export_png16(PlanarImage(np.zeros((3, 1, 1)), "xyz"), tmp_path / "o.png")
