"""PGM writer and the 5x5 review montage layout."""

import numpy as np
import pytest

from rarescore.pgm import CANVAS, emit_montage, montage_grid, write_pgm


def tile(value):
    return np.full((28, 28), value, dtype=np.uint8)


def parse_pgm(path):
    data = path.read_bytes()
    magic, dims, maxval, rest = data.split(b"\n", 3)
    width, height = (int(v) for v in dims.split())
    assert magic == b"P5" and int(maxval) == 255
    return np.frombuffer(rest, dtype=np.uint8).reshape(height, width)


class TestMontage:
    def test_full_grid_is_148_square(self, tmp_path):
        path = tmp_path / "m.pgm"
        emit_montage([tile(i * 10) for i in range(25)], path)
        img = parse_pgm(path)
        assert img.shape == (148, 148)
        assert CANVAS == 148  # 5*28 + 4*2

    def test_tiles_placed_row_major_with_white_separators(self):
        canvas = montage_grid([tile(0), tile(50)])
        assert (canvas[0:28, 0:28] == 0).all()
        assert (canvas[0:28, 30:58] == 50).all()
        assert (canvas[:, 28:30] == 255).all()  # first separator column
        assert (canvas[28:30, :] == 255).all()  # first separator row

    def test_single_image_padded_white(self):
        canvas = montage_grid([tile(7)])
        assert (canvas[0:28, 0:28] == 7).all()
        assert (canvas[0:28, 30:] == 255).all()
        assert (canvas[30:, :] == 255).all()

    def test_deterministic_bytes(self, tmp_path):
        images = [tile(i) for i in range(9)]
        a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
        emit_montage(images, a)
        emit_montage(images, b)
        assert a.read_bytes() == b.read_bytes()

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="at least one"):
            emit_montage([], tmp_path / "m.pgm")

    def test_more_than_25_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="at most"):
            emit_montage([tile(0)] * 26, tmp_path / "m.pgm")

    def test_wrong_tile_shape_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="28x28"):
            emit_montage([np.zeros((27, 28), dtype=np.uint8)], tmp_path / "m.pgm")


class TestWritePgm:
    def test_header_and_payload(self, tmp_path):
        img = np.arange(6, dtype=np.uint8).reshape(2, 3)
        path = tmp_path / "x.pgm"
        write_pgm(img, path)
        assert path.read_bytes() == b"P5\n3 2\n255\n" + bytes(range(6))
