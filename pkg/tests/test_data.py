import logging
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from addersr.data import (AUGMENTATIONS, ImagePlane, augment, bicubic_resize, cubic, decode_pnm, degrade,
                          encode_pnm, load_luminance_dir, make_patchset, mod_crop, read_pnm, rgb_to_y,
                          rgb_to_ycbcr, synthetic_corpus, synthetic_texture, write_pnm, ycbcr_to_rgb)
from addersr.errors import FormatError, ParameterError, ShapeError

from oracles import keys_cubic, upsample_1d


class TestPNM:
    def test_decode_p5(self):
        img = decode_pnm(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
        assert img.colorspace == "gray" and (img.width, img.height, img.channels) == (2, 2, 1)
        assert img.samples.tolist() == [[0, 128], [255, 64]]

    def test_p6_round_trip_bytes(self, rng):
        px = rng.integers(0, 256, size=(3, 5, 3), dtype=np.uint8)
        f = b"P6\n5 3\n255\n" + px.tobytes()
        img = decode_pnm(f)
        assert np.array_equal(img.samples, px)
        assert encode_pnm(img) == f

    def test_comments_and_whitespace(self):
        img = decode_pnm(b"P5 # gray\n# size next\n 1\t2 255\n" + bytes([7, 9]))
        assert img.samples.tolist() == [[7], [9]]

    def test_truncated_offset(self):
        head = b"P5 3 2 255\n"
        with pytest.raises(FormatError) as exc:
            decode_pnm(head + bytes(5))
        assert exc.value.offset == len(head) + 5
        assert f"offset {len(head) + 5}" in str(exc.value)

    def test_bad_magic(self):
        with pytest.raises(FormatError) as exc:
            decode_pnm(b"P2\n1 1\n255\n0")
        assert exc.value.offset == 0

    def test_bad_maxval(self):
        with pytest.raises(FormatError, match="maxval"):
            decode_pnm(b"P5\n1 1\n65535\n\x00\x00")

    def test_truncated_header(self):
        with pytest.raises(FormatError):
            decode_pnm(b"P5\n4")

    def test_file_round_trip(self, tmp_path, rng):
        img = ImagePlane(rng.integers(0, 256, size=(4, 6), dtype=np.uint8))
        write_pnm(tmp_path / "a.pgm", img)
        assert np.array_equal(read_pnm(tmp_path / "a.pgm").samples, img.samples)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]), st.integers(0, 2 ** 31))
    def test_round_trip_property(self, h, w, c, seed):
        px = np.random.default_rng(seed).integers(0, 256, size=(h, w, c), dtype=np.uint8)
        f = encode_pnm(ImagePlane(px))
        assert encode_pnm(decode_pnm(f)) == f


class TestImagePlane:
    def test_shape_check(self):
        with pytest.raises(ShapeError):
            ImagePlane(np.zeros((2, 2, 2)))

    def test_colorspace_check(self):
        with pytest.raises(ParameterError):
            ImagePlane(np.zeros((2, 2)), "cmyk")

    def test_to_uint8_rounds_and_clips(self):
        out = ImagePlane(np.array([[-3.0, 1.5, 254.6, 300.0]])).to_uint8()
        assert out.samples.tolist() == [[0, 2, 255, 255]]


class TestColour:
    def test_white_and_red(self):
        px = np.array([[[255, 255, 255], [255, 0, 0]]], dtype=np.uint8)
        y = rgb_to_y(ImagePlane(px, "rgb"))
        assert y.samples.tolist() == [[255, 76]]
        yf = rgb_to_y(ImagePlane(px.astype(float), "rgb"))
        assert yf.samples[0, 1] == pytest.approx(76.245)

    def test_gray_ramp(self):
        v = np.arange(256, dtype=np.uint8)
        px = np.stack([v, v, v], axis=-1)[None]
        assert np.array_equal(rgb_to_y(ImagePlane(px, "rgb")).samples[0], v)

    def test_gray_rejected(self):
        with pytest.raises(ParameterError):
            rgb_to_y(ImagePlane(np.zeros((2, 2))))

    def test_ycbcr_round_trip(self, rng):
        rgb = rng.uniform(0, 255, size=(5, 4, 3))
        np.testing.assert_allclose(ycbcr_to_rgb(rgb_to_ycbcr(rgb)), rgb, atol=1e-9)
        np.testing.assert_allclose(rgb_to_ycbcr(rgb)[..., 0],
                                   0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2])


class TestBicubic:
    def test_kernel_values(self):
        xs = np.linspace(-2.5, 2.5, 101)
        np.testing.assert_allclose(cubic(xs), [keys_cubic(x) for x in xs], atol=1e-15)
        assert cubic(0.0) == 1.0 and cubic(1.0) == 0.0 and cubic(2.0) == 0.0

    def test_factor_one_is_identity(self, rng):
        a = rng.uniform(size=(7, 9))
        np.testing.assert_allclose(bicubic_resize(a, 1), a, atol=1e-15)

    @pytest.mark.parametrize("factor", [Fraction(1, 2), Fraction(1, 3), Fraction(1, 4), 2, 3, 4, 1.5, Fraction(2, 3)])
    def test_constant_stays_constant(self, factor):
        out = bicubic_resize(np.full((12, 12), 0.37), factor)
        np.testing.assert_allclose(out, 0.37, atol=1e-13)

    def test_ramp_upscale_matches_oracle(self):
        ramp = np.linspace(0.0, 1.0, 9) ** 2
        out = bicubic_resize(np.tile(ramp, (3, 1)), 2)
        np.testing.assert_allclose(out[1], upsample_1d(ramp, 2), atol=1e-9)

    def test_output_size(self):
        assert bicubic_resize(np.zeros((7, 5)), Fraction(1, 2)).shape == (4, 3)
        assert bicubic_resize(np.zeros((4, 5)), 3).shape == (12, 15)

    def test_empty_output(self):
        with pytest.raises(ParameterError):
            bicubic_resize(np.zeros((3, 3)), 0)

    def test_plane_in_plane_out(self):
        out = bicubic_resize(ImagePlane(np.full((4, 4), 10, dtype=np.uint8)), 2)
        assert isinstance(out, ImagePlane) and out.samples.shape == (8, 8)

    def test_rgb_channels_independent(self, rng):
        a = rng.uniform(size=(6, 6, 3))
        out = bicubic_resize(a, 2)
        for c in range(3):
            np.testing.assert_allclose(out[..., c], bicubic_resize(a[..., c], 2), atol=1e-12)

    def test_degrade_shape(self, rng):
        hr = mod_crop(rng.uniform(size=(13, 10)), 3)
        assert degrade(hr, 3).shape == hr.shape == (12, 9)


class TestPatches:
    def test_grid_count(self):
        img = synthetic_texture(64, 0)
        assert len(make_patchset([img], 2, 32, 32)) == 4
        assert len(make_patchset([img], 2, 32, 32, augment_pairs=True)) == 32

    def test_pairs_recompute(self):
        img = synthetic_texture(48, 3)
        ps = make_patchset([img], 2, 16, 16, augment_pairs=True)
        for (lr, hr), p in zip(zip(ps.lr, ps.hr), ps.provenance):
            crop = img[p["top"]:p["top"] + 16, p["left"]:p["left"] + 16]
            assert np.array_equal(hr[0], augment(crop, p["rot"], p["flip"]))
            np.testing.assert_array_equal(lr[0], augment(degrade(crop, 2), p["rot"], p["flip"]))

    def test_augmentations_are_distinct(self, rng):
        a = rng.uniform(size=(4, 4))
        outs = {augment(a, r, f).tobytes() for r, f in AUGMENTATIONS}
        assert len(outs) == 8

    def test_small_images_skipped(self, caplog):
        with caplog.at_level(logging.WARNING):
            ps = make_patchset([np.zeros((8, 8)), synthetic_texture(32, 1)], 2, 16, 16)
        assert len(ps) == 4 and "smaller than patch" in caplog.text
        with pytest.raises(ParameterError):
            make_patchset([np.zeros((8, 8))], 2, 16, 16)

    def test_patch_multiple_of_scale(self):
        with pytest.raises(ParameterError):
            make_patchset([np.zeros((32, 32))], 3, 16, 16)

    def test_deterministic(self):
        imgs = synthetic_corpus(2, 40, 5)
        a = make_patchset(imgs, 2, 16, 8, augment_pairs=True)
        b = make_patchset(synthetic_corpus(2, 40, 5), 2, 16, 8, augment_pairs=True)
        assert a.lr.tobytes() == b.lr.tobytes() and a.hr.tobytes() == b.hr.tobytes()
        assert a.provenance == b.provenance


def test_synthetic_range_and_quantisation():
    img = synthetic_texture(64, 11)
    half = 0.5 / 255
    assert img.min() >= 0.1 - half and img.max() <= 0.9 + half
    assert np.allclose(img * 255, np.round(img * 255))
    assert not np.array_equal(img, synthetic_texture(64, 12))


def test_load_luminance_dir(tmp_path):
    px = np.zeros((5, 4, 3), dtype=np.uint8)
    px[..., 0] = 255
    write_pnm(tmp_path / "b.ppm", ImagePlane(px))
    write_pnm(tmp_path / "a.pgm", ImagePlane(np.full((5, 4), 51, dtype=np.uint8)))
    (tmp_path / "notes.txt").write_text("skip")
    out = load_luminance_dir(tmp_path, scale=2)
    assert len(out) == 2 and out[0].shape == (4, 4)
    np.testing.assert_allclose(out[0], 0.2)
    np.testing.assert_allclose(out[1], 0.299)
