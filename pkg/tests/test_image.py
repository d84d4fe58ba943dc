import numpy as np
import pytest

from emsr.image import (
    bicubic_upsample,
    downsample,
    extract_patch,
    load_image,
    patch_variance,
    save_image,
)
from oracles import ramp_image, ramp_value


class TestFileIO:
    def test_pgm_byte_identity(self, tmp_path):
        path = tmp_path / "a.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 7]))
        img = load_image(path)
        assert img.shape == (2, 2)
        assert img.tolist() == [[0.0, 128.0], [255.0, 7.0]]

    def test_pgm_comments(self, tmp_path):
        path = tmp_path / "a.pgm"
        path.write_bytes(b"P5\n# a comment\n2 1\n# another\n255\n" + bytes([9, 200]))
        assert load_image(path).tolist() == [[9.0, 200.0]]

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="file not found"):
            load_image(tmp_path / "nope.png")

    def test_color_png_rejected(self, tmp_path):
        from PIL import Image

        path = tmp_path / "c.png"
        Image.new("RGB", (4, 4), (10, 20, 30)).save(path)
        with pytest.raises(ValueError, match="color input rejected"):
            load_image(path)

    def test_16bit_png_rejected(self, tmp_path):
        from PIL import Image

        path = tmp_path / "deep.png"
        Image.new("I;16", (4, 4)).save(path)
        with pytest.raises(ValueError, match="bit depth"):
            load_image(path)

    def test_16bit_pgm_rejected(self, tmp_path):
        path = tmp_path / "deep.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\0\0")
        with pytest.raises(ValueError, match="bit depth"):
            load_image(path)

    @pytest.mark.parametrize("ext", [".pgm", ".png"])
    def test_round_trip_identity(self, tmp_path, ext):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, (13, 17)).astype(np.float64)
        path = tmp_path / f"rt{ext}"
        save_image(img, path)
        assert np.array_equal(load_image(path), img)

    def test_save_clamps_and_rounds(self, tmp_path):
        path = tmp_path / "q.pgm"
        save_image(np.array([[255.7, -3.2], [99.5, 0.4]]), path)
        assert load_image(path).tolist() == [[255.0, 0.0], [100.0, 0.0]]

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(IOError):
            save_image(np.zeros((2, 2)), tmp_path / "no" / "such" / "dir.pgm")


class TestBicubicUpsample:
    def test_constant_preserved(self):
        out = bicubic_upsample(np.full((6, 7), 100.0), 2)
        assert out.shape == (12, 14)
        assert np.abs(out - 100.0).max() <= 1e-9

    def test_ramp_against_closed_form(self):
        img = ramp_image(4, 4)
        out = bicubic_upsample(img, 2)
        # interior output samples must match the ramp evaluated at the
        # mapped source coordinates (cubic convolution is exact on ramps)
        for r in range(2, 6):
            for c in range(2, 6):
                src_r = (r + 0.5) / 2 - 0.5
                src_c = (c + 0.5) / 2 - 0.5
                assert abs(out[r, c] - ramp_value(src_r, src_c)) <= 0.5

    def test_subimage_dimensions(self):
        out = bicubic_upsample(np.zeros((157, 160)), 2)
        assert out.shape == (314, 320)

    def test_factor_validation(self):
        with pytest.raises(ValueError):
            bicubic_upsample(np.zeros((4, 4)), 1)

    def test_factor_three(self):
        out = bicubic_upsample(np.full((5, 5), 42.0), 3)
        assert out.shape == (15, 15)
        assert np.abs(out - 42.0).max() <= 1e-9


class TestDownsample:
    def test_block_mean(self):
        img = np.array([[0.0, 100.0], [200.0, 100.0]])
        assert downsample(img, 2).tolist() == [[100.0]]

    def test_constant(self):
        assert np.abs(downsample(np.full((9, 12), 7.0), 3) - 7.0).max() <= 1e-9

    def test_truncates_partial_blocks(self):
        out = downsample(np.arange(25, dtype=float).reshape(5, 5), 2)
        assert out.shape == (2, 2)

    def test_too_small(self):
        with pytest.raises(ValueError):
            downsample(np.zeros((1, 5)), 2)


class TestExtractPatch:
    def test_interior(self):
        img = np.arange(25, dtype=float).reshape(5, 5)
        patch = extract_patch(img, (2, 2), 3)
        assert np.array_equal(patch, img[1:4, 1:4])

    def test_padding_replicates_constant(self):
        patch = extract_patch(np.full((5, 5), 3.0), (0, 0), 3, pad=True)
        assert np.abs(patch - 3.0).max() == 0.0

    def test_exact_fit(self):
        img = np.arange(81, dtype=float).reshape(9, 9)
        assert np.array_equal(extract_patch(img, (4, 4), 9), img)

    def test_even_side_rejected(self):
        with pytest.raises(ValueError):
            extract_patch(np.zeros((5, 5)), (2, 2), 4)

    def test_center_outside(self):
        with pytest.raises(ValueError):
            extract_patch(np.zeros((5, 5)), (9, 2), 3)

    def test_border_without_padding(self):
        with pytest.raises(ValueError):
            extract_patch(np.zeros((5, 5)), (0, 0), 3)

    def test_reembedding_lossless(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 255, (9, 9))
        rebuilt = img.copy()
        patch = extract_patch(img, (4, 4), 5)
        rebuilt[2:7, 2:7] = patch
        assert np.array_equal(rebuilt, img)


class TestPatchVariance:
    def test_constant_zero(self):
        assert patch_variance(np.full((3, 3), 9.0)) == 0.0

    def test_two_point(self):
        patch = np.array([0.0, 255.0, 0.0, 255.0])
        assert patch_variance(patch) == pytest.approx((255.0 / 2) ** 2)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        patch = rng.uniform(0, 255, (5, 5))
        assert patch_variance(patch + 13.5) == pytest.approx(patch_variance(patch), abs=1e-9)

    @pytest.mark.parametrize("a", [2.0, 0.5])
    def test_quadratic_scaling(self, a):
        rng = np.random.default_rng(3)
        patch = rng.uniform(0, 255, (5, 5))
        assert patch_variance(a * patch) == pytest.approx(a * a * patch_variance(patch), rel=1e-12)
