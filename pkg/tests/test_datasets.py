"""Dataset generators and PGM image handling."""

import numpy as np
import pytest

from difflab.datasets import generate_dataset, ingest_images, read_pgm, to_pixels, write_pgm
from difflab.errors import ConfigError


class TestGenerators:
    def test_unknown_name_rejected(self):
        with pytest.raises(ConfigError):
            generate_dataset("nope", {}, np.random.default_rng(0))

    def test_gauss_mixture_modes_on_unit_circle(self):
        data = generate_dataset("gauss_mixture_8", {"n": 4000, "sigma": 0.01},
                                np.random.default_rng(1))
        assert data.num_classes == 8
        for k in range(8):
            pts = data.points[data.labels == k]
            center = pts.mean(axis=0)
            expect = np.array([np.cos(k * np.pi / 4), np.sin(k * np.pi / 4)])
            assert np.linalg.norm(center - expect) < 0.01

    def test_deterministic_given_seed(self):
        for name in ("gauss_mixture_8", "two_moons", "checkerboard", "shapes16"):
            a = generate_dataset(name, {"n": 64}, np.random.default_rng(9))
            b = generate_dataset(name, {"n": 64}, np.random.default_rng(9))
            assert a.points.tobytes() == b.points.tobytes()
            assert np.array_equal(a.labels, b.labels)

    def test_two_moons_shapes_and_classes(self):
        data = generate_dataset("two_moons", {"n": 256}, np.random.default_rng(2))
        assert data.points.shape == (256, 2)
        assert set(np.unique(data.labels)) == {0, 1}

    def test_checkerboard_on_dark_squares(self):
        data = generate_dataset("checkerboard", {"n": 512}, np.random.default_rng(3))
        cells = np.floor(data.points).astype(int)
        assert np.all(cells.sum(axis=1) % 2 == 0)

    def test_shapes16_range_and_labels(self):
        data = generate_dataset("shapes16", {"n": 128}, np.random.default_rng(4))
        assert data.points.shape == (128, 1, 16, 16)
        assert data.points.min() >= -1.0 and data.points.max() <= 1.0
        assert data.num_classes == 4
        assert set(np.unique(data.labels)) <= {0, 1, 2, 3}
        # classes are visually distinct on average
        means = [data.points[data.labels == k].mean(axis=0) for k in range(4)]
        for i in range(4):
            for j in range(i + 1, 4):
                assert np.abs(means[i] - means[j]).max() > 0.05


class TestPgm:
    def test_round_trip(self, tmp_path):
        img = np.arange(64, dtype=np.uint8).reshape(8, 8)
        path = str(tmp_path / "img.pgm")
        write_pgm(path, img, comment="hash=deadbeef")
        back = read_pgm(path)
        assert np.array_equal(img, back)

    def test_comment_handling(self, tmp_path):
        path = str(tmp_path / "c.pgm")
        with open(path, "wb") as fh:
            fh.write(b"P5\n# a comment\n4 2\n255\n" + bytes(range(8)))
        img = read_pgm(path)
        assert img.shape == (2, 4)
        assert img[0, 0] == 0 and img[1, 3] == 7

    def test_to_pixels_clips_and_scales(self):
        img = np.array([[[-1.0, 0.0], [1.0, 2.0]]], dtype=np.float32)
        px = to_pixels(img)
        assert px.dtype == np.uint8
        assert px[0, 0] == 0 and px[0, 1] == 127 and px[1, 0] == 255 and px[1, 1] == 255

    def test_non_pgm_rejected(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(ConfigError):
            read_pgm(str(path))


class TestIngest:
    def test_class_subdirectories(self, tmp_path):
        rng = np.random.default_rng(6)
        for cls in ("circle", "square"):
            d = tmp_path / cls
            d.mkdir()
            for i in range(3):
                write_pgm(str(d / f"{i}.pgm"), rng.integers(0, 256, (16, 16)).astype(np.uint8))
        data = ingest_images(str(tmp_path))
        assert len(data) == 6
        assert data.num_classes == 2
        assert data.points.shape == (6, 1, 16, 16)
        assert data.points.min() >= -1.0 and data.points.max() <= 1.0
        assert np.array_equal(np.sort(np.unique(data.labels)), [0, 1])

    def test_missing_directory_rejected(self):
        with pytest.raises(ConfigError):
            ingest_images("/nonexistent/path")

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            ingest_images(str(tmp_path))
