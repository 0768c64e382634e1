import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wrv import preproc


def sauvola_oracle(img: np.ndarray, window: int, k: float, r: float) -> np.ndarray:
    """Direct per-pixel reference: O(n * w^2) double loop, clamped borders."""
    img = np.asarray(img, dtype=np.int64)
    h, w = img.shape
    half = window // 2
    out = np.zeros((h, w), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            y0, y1 = max(y - half, 0), min(y + half, h - 1) + 1
            x0, x1 = max(x - half, 0), min(x + half, w - 1) + 1
            patch = img[y0:y1, x0:x1]
            n = patch.size
            s1 = int(patch.sum())
            s2 = int((patch * patch).sum())
            m = s1 / n
            var = s2 / n - m * m
            s = math.sqrt(max(var, 0.0))
            t = m * (1.0 + k * (s / r - 1.0))
            out[y, x] = 1 if img[y, x] < t else 0
    return out


class TestSauvola:
    def test_uniform_bright_is_all_background(self):
        img = np.full((32, 32), 255, dtype=np.uint8)
        assert not preproc.sauvola_binarize(img, window=11).any()

    def test_uniform_dark_is_all_background(self):
        # threshold is exactly 0 and the comparison is strict
        img = np.zeros((32, 32), dtype=np.uint8)
        assert not preproc.sauvola_binarize(img, window=11).any()

    def test_half_dark_half_bright_split(self):
        img = np.full((64, 64), 255, dtype=np.uint8)
        img[:, :32] = 0
        got = preproc.sauvola_binarize(img, window=51, k=0.2, r=128.0)
        expected = sauvola_oracle(img, 51, 0.2, 128.0)
        assert np.array_equal(got, expected)
        # dark pixels whose window reaches the contrast edge are ink; dark
        # pixels in a uniformly dark window have threshold 0 and stay out
        assert got[:, 7:32].all()
        assert not got[:, :7].any()
        assert not got[:, 32:].any()

    @pytest.mark.parametrize("seed", range(4))
    def test_bit_matches_oracle_on_random_images(self, seed):
        rng = np.random.default_rng(seed)
        img = rng.integers(0, 256, size=(40, 52), dtype=np.uint8)
        window = int(rng.choice([3, 7, 15, 51]))
        got = preproc.sauvola_binarize(img, window=window)
        assert np.array_equal(got, sauvola_oracle(img, window, 0.2, 128.0))

    def test_two_level_input_matches_oracle(self):
        # binarizing an image that is already {0, 255} reproduces the
        # oracle mask exactly
        rng = np.random.default_rng(3)
        img = (rng.random((48, 48)) < 0.3).astype(np.uint8) * 255
        got = preproc.sauvola_binarize(img, window=15)
        assert np.array_equal(got, sauvola_oracle(img, 15, 0.2, 128.0))

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty input"):
            preproc.sauvola_binarize(np.empty((0, 5), dtype=np.uint8))

    def test_rejects_even_window(self):
        img = np.zeros((8, 8), dtype=np.uint8)
        with pytest.raises(ValueError, match="window must be odd"):
            preproc.sauvola_binarize(img, window=4)

    @pytest.mark.parametrize("kw", [{"window": 1}, {"k": 0.0}, {"k": 1.5}, {"r": 0}])
    def test_rejects_bad_params(self, kw):
        img = np.zeros((8, 8), dtype=np.uint8)
        with pytest.raises(ValueError):
            preproc.sauvola_binarize(img, **kw)


class TestForegroundFraction:
    def test_all_background(self):
        assert preproc.foreground_fraction(np.zeros((224, 224), np.uint8)) == 0.0

    def test_all_foreground(self):
        assert preproc.foreground_fraction(np.ones((224, 224), np.uint8)) == 1.0

    def test_exact_count_below_cutoff(self):
        mask = np.zeros((224, 224), dtype=np.uint8)
        mask.flat[:1254] = 1
        frac = preproc.foreground_fraction(mask)
        assert frac == 1254 / 50176
        assert frac < 0.025

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            preproc.foreground_fraction(np.empty((0, 0), np.uint8))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_invert_complements_fraction(self, seed):
        rng = np.random.default_rng(seed)
        mask = (rng.random((13, 9)) < rng.random()).astype(np.uint8)
        total = preproc.foreground_fraction(mask) + preproc.foreground_fraction(
            preproc.invert(mask)
        )
        assert total == pytest.approx(1.0, abs=1e-12)


class TestGrayscale:
    def test_luma_weights(self):
        rgb = np.zeros((1, 3, 3), dtype=np.uint8)
        rgb[0, 0] = [255, 0, 0]
        rgb[0, 1] = [0, 255, 0]
        rgb[0, 2] = [0, 0, 255]
        gray = preproc.to_grayscale(rgb)
        assert gray.tolist() == [[round(255 * 0.299), round(255 * 0.587),
                                  round(255 * 0.114)]]


class TestImageIO:
    def test_pbm_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        mask = (rng.random((21, 13)) < 0.4).astype(np.uint8)
        path = tmp_path / "m.pbm"
        preproc.save_pbm(path, mask)
        assert np.array_equal(preproc.load_mask(path), mask)

    def test_pbm_ink_is_dark_in_grayscale_view(self, tmp_path):
        mask = np.array([[1, 0]], dtype=np.uint8)
        path = tmp_path / "m.pbm"
        preproc.save_pbm(path, mask)
        assert preproc.load_gray(path).tolist() == [[0, 255]]

    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, size=(10, 17), dtype=np.uint8)
        path = tmp_path / "g.pgm"
        preproc.save_pgm(path, img)
        assert np.array_equal(preproc.load_gray(path), img)

    def test_png_round_trip(self, tmp_path):
        from PIL import Image

        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, size=(12, 8), dtype=np.uint8)
        path = tmp_path / "g.png"
        Image.fromarray(img, mode="L").save(path)
        assert np.array_equal(preproc.load_gray(path), img)

    def test_load_mask_nonzero_is_foreground(self, tmp_path):
        from PIL import Image

        img = np.array([[0, 128, 255]], dtype=np.uint8)
        path = tmp_path / "b.png"
        Image.fromarray(img, mode="L").save(path)
        assert preproc.load_mask(path).tolist() == [[0, 1, 1]]
        assert preproc.load_mask(path, inverted=True).tolist() == [[1, 0, 0]]

    def test_ascii_pnm_variants(self, tmp_path):
        p1 = tmp_path / "a.pbm"
        p1.write_bytes(b"P1\n# comment\n3 2\n1 0 1\n0 1 0\n")
        assert preproc.load_mask(p1).tolist() == [[1, 0, 1], [0, 1, 0]]
        p2 = tmp_path / "a.pgm"
        p2.write_bytes(b"P2\n2 2\n255\n0 10\n20 255\n")
        assert preproc.load_gray(p2).tolist() == [[0, 10], [20, 255]]
