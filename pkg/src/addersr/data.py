"""Image planes, PNM codecs, colour conversion, bicubic resampling and patches."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError, ShapeError

log = logging.getLogger(__name__)

BICUBIC_A = -0.5


@dataclass
class ImagePlane:
    """Raster of shape (height, width) or (height, width, 3).

    ``samples`` is uint8 in [0, 255] or float64.
    """

    samples: np.ndarray
    colorspace: str = "gray"

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim == 3 and s.shape[2] == 1:
            s = s[:, :, 0]
        if s.ndim not in (2, 3) or (s.ndim == 3 and s.shape[2] != 3):
            raise ShapeError(f"samples must be HxW or HxWx3, got {s.shape}")
        if s.dtype != np.uint8:
            s = s.astype(np.float64)
        self.samples = s
        if self.colorspace not in ("gray", "rgb", "ycbcr-y"):
            raise ParameterError(f"unknown colorspace {self.colorspace!r}")

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 2 else 3

    def as_float(self) -> np.ndarray:
        return self.samples.astype(np.float64)

    def to_uint8(self) -> "ImagePlane":
        s = self.samples
        if s.dtype != np.uint8:
            s = np.clip(np.round(s), 0, 255).astype(np.uint8)
        return ImagePlane(s, self.colorspace)


def _header_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated header", offset=start)
    return data[start:pos], pos


def decode_pnm(data: bytes) -> ImagePlane:
    """Decode binary P5 (gray) or P6 (RGB) with maxval 255."""
    if data[:2] not in (b"P5", b"P6"):
        raise FormatError(f"bad magic {data[:2]!r}, expected P5 or P6", offset=0)
    channels = 1 if data[:2] == b"P5" else 3
    pos = 2
    values = []
    for label in ("width", "height", "maxval"):
        start = pos
        tok, pos = _header_token(data, pos)
        if not tok.isdigit():
            raise FormatError(f"non-numeric {label} {tok!r}", offset=start)
        values.append(int(tok))
    width, height, maxval = values
    if maxval != 255:
        raise FormatError(f"maxval {maxval} unsupported, need 255", offset=pos)
    if width < 1 or height < 1:
        raise FormatError(f"empty image {width}x{height}", offset=pos)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after maxval", offset=pos)
    pos += 1
    need = width * height * channels
    avail = len(data) - pos
    if avail < need:
        raise FormatError(f"truncated payload: {avail} of {need} bytes", offset=pos + avail)
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).copy()
    shape = (height, width) if channels == 1 else (height, width, 3)
    return ImagePlane(pixels.reshape(shape), "gray" if channels == 1 else "rgb")


def encode_pnm(img: ImagePlane) -> bytes:
    img = img.to_uint8()
    magic = b"P5" if img.channels == 1 else b"P6"
    head = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return head + img.samples.tobytes()


def read_pnm(path) -> ImagePlane:
    return decode_pnm(Path(path).read_bytes())


def write_pnm(path, img: ImagePlane) -> None:
    Path(path).write_bytes(encode_pnm(img))


def rgb_to_y(img: ImagePlane) -> ImagePlane:
    """BT.601 luma 0.299 R + 0.587 G + 0.114 B; 8-bit input gives rounded 8-bit output."""
    if img.channels != 3:
        raise ParameterError("rgb_to_y needs a 3-channel image")
    s = img.as_float()
    y = 0.299 * s[:, :, 0] + 0.587 * s[:, :, 1] + 0.114 * s[:, :, 2]
    out = ImagePlane(y, "ycbcr-y")
    return out.to_uint8() if img.samples.dtype == np.uint8 else out


_YCC = np.array([[0.299, 0.587, 0.114],
                 [-0.168736, -0.331264, 0.5],
                 [0.5, -0.418688, -0.081312]])
_YCC_INV = np.linalg.inv(_YCC)
_YCC_OFFSET = np.array([0.0, 128.0, 128.0])


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """Full-range BT.601 YCbCr on a 0-255 float scale."""
    return np.asarray(rgb, dtype=np.float64) @ _YCC.T + _YCC_OFFSET


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`rgb_to_ycbcr`."""
    return (np.asarray(ycc, dtype=np.float64) - _YCC_OFFSET) @ _YCC_INV.T


def cubic(x, a: float = BICUBIC_A):
    """Keys cubic convolution kernel."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0
    far = a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def _as_fraction(factor) -> Fraction:
    f = Fraction(factor).limit_denominator(10 ** 6) if not isinstance(factor, Fraction) else factor
    if f <= 0:
        raise ParameterError(f"resize factor must be positive, got {factor}")
    return f


def resize_matrix(in_len: int, out_len: int, scale: float) -> np.ndarray:
    """Row-stochastic (out_len, in_len) resampling matrix.

    Pixel centres map as u = (x + 0.5) / scale - 0.5; when shrinking, the
    kernel is stretched by 1/scale so it also low-passes. Taps beyond the
    border are clamped onto the edge pixel.
    """
    shrink = scale < 1.0
    support = 4.0 / scale if shrink else 4.0
    x = np.arange(out_len, dtype=np.float64)
    u = (x + 0.5) / scale - 0.5
    left = np.floor(u - support / 2.0).astype(np.int64)
    taps = int(math.ceil(support)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = u[:, None] - idx
    wts = scale * cubic(scale * dist) if shrink else cubic(dist)
    wts = wts / wts.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_len - 1)
    m = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(m, (rows, idx.ravel()), wts.ravel())
    return m


def bicubic_resize(img, factor):
    """Resize by ``factor`` (float or Fraction). Returns the same kind it was given.

    ImagePlane in gives a float ImagePlane out; arrays are treated as
    (h, w) or (h, w, channels).
    """
    f = _as_fraction(factor)
    plane = img if isinstance(img, ImagePlane) else None
    arr = plane.as_float() if plane is not None else np.asarray(img, dtype=np.float64)
    h, w = arr.shape[:2]
    oh, ow = math.ceil(h * f), math.ceil(w * f)
    if oh < 1 or ow < 1:
        raise ParameterError(f"resize of {h}x{w} by {factor} gives an empty image")
    mh = resize_matrix(h, oh, float(f))
    mw = resize_matrix(w, ow, float(f))
    if arr.ndim == 2:
        out = mh @ arr @ mw.T
    else:
        out = np.einsum("ij,jkc,lk->ilc", mh, arr, mw)
    if plane is not None:
        return ImagePlane(out, plane.colorspace)
    return out


def mod_crop(arr: np.ndarray, scale: int) -> np.ndarray:
    h, w = arr.shape[:2]
    return arr[: h - h % scale, : w - w % scale]


def degrade(hr: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic down by ``scale`` then back up: the pre-upsampled model input."""
    return bicubic_resize(bicubic_resize(hr, Fraction(1, scale)), scale)


AUGMENTATIONS = tuple((rot, flip) for flip in (False, True) for rot in range(4))


def augment(arr: np.ndarray, rot: int, flip: bool) -> np.ndarray:
    out = np.rot90(arr, rot)
    if flip:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


@dataclass
class PatchSet:
    """Stacked (N, 1, p, p) pairs plus where each pair came from."""

    lr: np.ndarray
    hr: np.ndarray
    provenance: list = field(default_factory=list)

    def __len__(self):
        return self.lr.shape[0]

    def __getitem__(self, i):
        return self.lr[i], self.hr[i]


def make_patchset(hr_images, scale: int, patch: int, stride: int, augment_pairs: bool = False) -> PatchSet:
    """Grid-crop HR images; each LR patch is the degraded version of its HR crop."""
    if patch % scale:
        raise ParameterError(f"patch {patch} must be a multiple of scale {scale}")
    if stride < 1:
        raise ParameterError("stride must be positive")
    augs = AUGMENTATIONS if augment_pairs else AUGMENTATIONS[:1]
    lrs, hrs, prov = [], [], []
    for n, img in enumerate(hr_images):
        arr = img.as_float() if isinstance(img, ImagePlane) else np.asarray(img, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError("patch extraction works on single-channel planes")
        arr = mod_crop(arr, scale)
        h, w = arr.shape
        if h < patch or w < patch:
            log.warning("image %d (%dx%d) is smaller than patch %d; skipped", n, h, w, patch)
            continue
        for top in range(0, h - patch + 1, stride):
            for left in range(0, w - patch + 1, stride):
                crop = arr[top:top + patch, left:left + patch]
                low = degrade(crop, scale)
                for rot, flip in augs:
                    hrs.append(augment(crop, rot, flip))
                    lrs.append(augment(low, rot, flip))
                    prov.append({"image": n, "top": top, "left": left, "rot": rot, "flip": flip})
    if not hrs:
        raise ParameterError("no patches could be extracted")
    return PatchSet(np.stack(lrs)[:, None], np.stack(hrs)[:, None], prov)


def synthetic_texture(size: int, seed: int) -> np.ndarray:
    """Procedural test image in [0, 1]: gratings, hard-edged shapes and blurred noise."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size))
    for _ in range(3):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.03, 0.18)
        phase = rng.uniform(0, 2 * np.pi)
        img += rng.uniform(0.05, 0.15) * np.sin(2 * np.pi * freq *
                                               (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    for _ in range(rng.integers(3, 7)):
        level = rng.uniform(-0.3, 0.3)
        if rng.random() < 0.5:
            cy, cx = rng.uniform(0, size, 2)
            r = rng.uniform(size / 10, size / 3)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        else:
            y0, x0 = rng.integers(0, size, 2)
            y1, x1 = y0 + rng.integers(size // 8, size // 2), x0 + rng.integers(size // 8, size // 2)
            mask = (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)
        img[mask] += level
    noise = rng.normal(size=(size, size))
    k = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    for axis in (0, 1):
        noise = np.apply_along_axis(lambda v: np.convolve(v, k, mode="same"), axis, noise)
    img += 0.08 * noise
    img = (img - img.min()) / (img.max() - img.min())
    img = 0.1 + 0.8 * img
    return np.round(img * 255.0) / 255.0


def synthetic_corpus(n: int, size: int, seed: int) -> list[np.ndarray]:
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return [synthetic_texture(size, int(s)) for s in seeds]


def load_luminance_dir(directory, scale: int | None = None) -> list[np.ndarray]:
    """Y planes (0-1 floats) of every .pgm/.ppm/.pnm file, sorted by name."""
    out = []
    for path in sorted(Path(directory).iterdir()):
        if path.suffix.lower() not in (".pgm", ".ppm", ".pnm"):
            continue
        img = read_pnm(path)
        y = rgb_to_y(ImagePlane(img.as_float(), "rgb")).samples if img.channels == 3 else img.as_float()
        if scale:
            y = mod_crop(y, scale)
        out.append(y / 255.0)
    return out
