"""Grayscale image handling: file I/O, resampling, and patch access.

Images are plain 2-D float64 arrays indexed ``[row, col]`` with intensities
in the nominal range [0, 255]. All arithmetic stays in double precision;
quantization to 8-bit codes happens only when a file is written.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "as_image",
    "load_image",
    "save_image",
    "quantize",
    "bicubic_upsample",
    "bicubic_sample",
    "downsample",
    "extract_patch",
    "patch_variance",
]


def as_image(data) -> np.ndarray:
    """Validate ``data`` as a grayscale image and return it as float64.

    Requires a 2-D array with at least one row and one column and all
    intensities finite.
    """
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale array, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must have at least one row and one column")
    if not np.all(np.isfinite(img)):
        raise ValueError("image intensities must be finite")
    return img


def load_image(path) -> np.ndarray:
    """Load an 8-bit grayscale PGM (P5) or PNG file.

    Stored 8-bit codes are mapped to float64 values 0..255 exactly. Color
    images and bit depths above 8 are rejected rather than converted.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    ext = path.suffix.lower()
    if ext == ".pgm":
        return _read_pgm(path)
    if ext == ".png":
        return _read_png(path)
    raise ValueError(f"unsupported image format '{ext}': {path} (expected .pgm or .png)")


def save_image(img, path) -> None:
    """Write an image as 8-bit PGM (P5) or PNG, chosen by file extension.

    Intensities are clamped to [0, 255] and rounded half away from zero.
    Saving and reloading already-quantized data is an identity.
    """
    img = as_image(img)
    path = Path(path)
    codes = quantize(img)
    ext = path.suffix.lower()
    if ext == ".pgm":
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
        try:
            path.write_bytes(header + codes.tobytes())
        except OSError as exc:
            raise IOError(f"cannot write image: {path}: {exc}") from exc
    elif ext == ".png":
        try:
            Image.fromarray(codes, mode="L").save(path)
        except OSError as exc:
            raise IOError(f"cannot write image: {path}: {exc}") from exc
    else:
        raise ValueError(f"unsupported image format '{ext}': {path} (expected .pgm or .png)")


def quantize(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 255] and round half away from zero to uint8 codes."""
    return np.floor(np.clip(img, 0.0, 255.0) + 0.5).astype(np.uint8)


def _read_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if raw[:2] != b"P5":
        raise ValueError(f"not a binary PGM (P5) file: {path}")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"truncated PGM header: {path}")
        try:
            fields.append(int(raw[start:pos]))
        except ValueError as exc:
            raise ValueError(f"malformed PGM header: {path}") from exc
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ValueError(f"invalid PGM dimensions {width}x{height}: {path}")
    if maxval > 255:
        raise ValueError(f"unsupported bit depth (maxval {maxval} > 255): {path}")
    if len(raw) - pos < width * height:
        raise ValueError(f"truncated PGM raster: {path}")
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    return data.reshape(height, width).astype(np.float64)


def _read_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
            raise ValueError(f"unsupported bit depth ({im.mode}): {path}")
        if im.mode != "L":
            raise ValueError(f"color input rejected ({im.mode}): {path}")
        return np.asarray(im, dtype=np.float64)


def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    """Cubic convolution kernel (Keys, a = -0.5), reproduces linear ramps."""
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    return np.where(
        t <= 1.0,
        1.5 * t3 - 2.5 * t2 + 1.0,
        np.where(t < 2.0, -0.5 * t3 + 2.5 * t2 - 4.0 * t + 2.0, 0.0),
    )


def _upsample_cols(img: np.ndarray, factor: int) -> np.ndarray:
    w = img.shape[1]
    out_w = w * factor
    # pixel-center alignment: output j samples the input at (j + 0.5)/f - 0.5
    x = (np.arange(out_w) + 0.5) / factor - 0.5
    i0 = np.floor(x).astype(np.int64)
    frac = x - i0
    out = np.zeros((img.shape[0], out_w))
    for tap in range(-1, 3):
        idx = np.clip(i0 + tap, 0, w - 1)
        out += img[:, idx] * _cubic_kernel(frac - tap)
    return out


def bicubic_upsample(img, factor: int) -> np.ndarray:
    """Upsample by an integer factor >= 2 with cubic convolution.

    Uses the Keys kernel (a = -0.5) with border replication; output
    dimensions are exactly ``factor`` times the input dimensions.
    """
    img = as_image(img)
    if int(factor) != factor or factor < 2:
        raise ValueError(f"upsampling factor must be an integer >= 2, got {factor}")
    factor = int(factor)
    out = _upsample_cols(img, factor)
    return _upsample_cols(out.T, factor).T


def bicubic_sample(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample an image at fractional (row, col) coordinates.

    Cubic convolution with border replication for taps outside the frame;
    callers decide how to treat coordinates that fall outside entirely.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    out = np.zeros(np.broadcast(rows, cols).shape)
    for tr in range(-1, 3):
        ri = np.clip(r0 + tr, 0, h - 1)
        wr = _cubic_kernel(fr - tr)
        row_acc = np.zeros_like(out)
        for tc in range(-1, 3):
            ci = np.clip(c0 + tc, 0, w - 1)
            row_acc += _cubic_kernel(fc - tc) * img[ri, ci]
        out += wr * row_acc
    return out


def downsample(img, factor: int) -> np.ndarray:
    """Block-average decimation by an integer factor >= 2.

    Each output pixel is the mean of its factor x factor source block;
    trailing rows/columns that do not fill a block are dropped.
    """
    img = as_image(img)
    if int(factor) != factor or factor < 2:
        raise ValueError(f"downsampling factor must be an integer >= 2, got {factor}")
    factor = int(factor)
    h, w = img.shape
    if h < factor or w < factor:
        raise ValueError(f"image {h}x{w} smaller than one {factor}x{factor} block")
    h2, w2 = h // factor, w // factor
    blocks = img[: h2 * factor, : w2 * factor].reshape(h2, factor, w2, factor)
    return blocks.mean(axis=(1, 3))


def extract_patch(img, center: tuple[int, int], side: int, pad: bool = False) -> np.ndarray:
    """Extract the ``side`` x ``side`` window centered at (row, col).

    Without padding the center must sit at least ``side // 2`` pixels from
    every border. With ``pad=True`` out-of-range coordinates clamp to the
    nearest border pixel (replication).
    """
    img = as_image(img)
    if side % 2 == 0 or side < 3:
        raise ValueError(f"patch side must be odd and >= 3, got {side}")
    r, c = int(center[0]), int(center[1])
    h, w = img.shape
    if not (0 <= r < h and 0 <= c < w):
        raise ValueError(f"patch center {(r, c)} outside image {h}x{w}")
    half = side // 2
    if pad:
        rows = np.clip(np.arange(r - half, r + half + 1), 0, h - 1)
        cols = np.clip(np.arange(c - half, c + half + 1), 0, w - 1)
        return img[np.ix_(rows, cols)]
    if r - half < 0 or c - half < 0 or r + half >= h or c + half >= w:
        raise ValueError(
            f"patch center {(r, c)} too close to border for side {side} (use pad=True)"
        )
    return img[r - half : r + half + 1, c - half : c + half + 1].copy()


def patch_variance(patch) -> float:
    """Population variance of patch intensities (divide by element count)."""
    return float(np.var(np.asarray(patch, dtype=np.float64)))
