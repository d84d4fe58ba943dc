"""Synthetic paired-image generation for desk-scale validation.

Produces a high/low-resolution pair from a known ground-truth image by
applying the discrepancy sources seen between physically captured pairs:
independent noise on both sides, a contrast mismatch, a rigid misalignment,
and a smooth low-frequency warp. The returned record carries the exact
transform and warp field, so registration and patch matching can be checked
against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .experiment import ImagePair
from .image import as_image, bicubic_sample, downsample
from .registration import GlobalTransform

__all__ = [
    "DegradationSpec",
    "SynthesisRecord",
    "make_scene",
    "synthesize_pair",
]


@dataclass(frozen=True)
class DegradationSpec:
    """Degradation parameters for one synthetic pair.

    ``global_shift`` is (x, y) in full-resolution pixels and
    ``global_rotation`` in degrees; these are exactly the rigid correction
    that registration should recover. The warp is a smooth sinusoidal
    displacement field bounded by ``local_warp_amplitude`` pixels with
    spatial period around ``local_warp_scale`` pixels.
    """

    blur_sigma: float = 0.0
    noise_sigma_hr: float = 0.0
    noise_sigma_lr: float = 0.0
    contrast_gain: float = 1.0
    contrast_offset: float = 0.0
    global_shift: tuple[float, float] = (0.0, 0.0)
    global_rotation: float = 0.0
    local_warp_amplitude: float = 0.0
    local_warp_scale: float = 40.0
    seed: int = 0

    def __post_init__(self):
        if self.blur_sigma < 0 or self.noise_sigma_hr < 0 or self.noise_sigma_lr < 0:
            raise ValueError("noise and blur amplitudes must be >= 0")
        if self.local_warp_amplitude < 0 or self.local_warp_scale <= 0:
            raise ValueError("warp amplitude must be >= 0 and scale positive")

    def with_seed(self, seed: int) -> "DegradationSpec":
        return replace(self, seed=seed)


@dataclass
class SynthesisRecord:
    """Ground truth behind a synthetic pair: the rigid correction that
    aligns the upsampled LR to the HR frame and the residual per-pixel
    warp displacement (rows, cols) at full resolution."""

    transform: GlobalTransform
    warp_rows: np.ndarray
    warp_cols: np.ndarray
    spec: DegradationSpec


def make_scene(
    height: int,
    width: int,
    seed: int = 0,
    blob_count: int | None = None,
    background: float = 70.0,
    foreground: float = 185.0,
    texture_amplitude: float = 8.0,
) -> np.ndarray:
    """Generate a microscope-like test scene.

    Bright soft-edged clusters on a darker host with a smooth texture
    component: curved boundaries give local registration something to grip,
    while the background stays below typical rich-texture variance
    thresholds.
    """
    if height < 16 or width < 16:
        raise ValueError("scene must be at least 16x16")
    rng = np.random.default_rng(seed)
    if blob_count is None:
        blob_count = max(6, (height * width) // 2500)
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.full((height, width), background)
    for _ in range(blob_count):
        cy = rng.uniform(0, height - 1)
        cx = rng.uniform(0, width - 1)
        radius = rng.uniform(4.0, max(6.0, min(height, width) / 6.0))
        level = foreground + rng.uniform(-18.0, 18.0)
        dist = np.hypot(rows - cy, cols - cx)
        profile = background + (level - background) / (1.0 + np.exp((dist - radius) / 1.5))
        np.maximum(img, profile, out=img)
    texture = ndimage.gaussian_filter(rng.standard_normal((height, width)), 2.0, mode="nearest")
    img += texture_amplitude * texture / texture.std()
    speckle = ndimage.gaussian_filter(rng.standard_normal((height, width)), 1.0, mode="nearest")
    img += 0.5 * texture_amplitude * speckle / speckle.std()
    return np.clip(img, 0.0, 255.0)


def _warp_phases(rng: np.random.Generator) -> np.ndarray:
    """Six phases per displacement component, drawn in a fixed order."""
    return rng.uniform(0.0, 2.0 * np.pi, size=(2, 6))


def _warp_component(rows, cols, scale, phases):
    # a few incommensurate sinusoids; amplitude normalized to [-1, 1]
    f = 2.0 * np.pi / scale
    raw = (
        np.sin(f * cols + phases[0]) * np.cos(0.73 * f * rows + phases[1])
        + 0.6 * np.sin(1.31 * f * rows + phases[2]) * np.cos(0.57 * f * cols + phases[3])
        + 0.4 * np.sin(0.41 * f * (rows + cols) + phases[4] + phases[5])
    )
    return raw / 2.0


def synthesize_pair(truth, spec: DegradationSpec) -> tuple[ImagePair, SynthesisRecord]:
    """Degrade a ground-truth image into an (HR, LR) pair.

    HR is the truth plus Gaussian noise. LR applies, in order: the smooth
    warp and rigid motion (one resampling pass), the contrast mismatch,
    Gaussian blur, 2x block downsampling, and Gaussian noise. With an
    all-zero spec the LR is exactly the block downsample of the truth and
    HR equals the truth. Fixed seeds reproduce pairs bit for bit.
    """
    truth = as_image(truth)
    h, w = truth.shape
    if h % 2 or w % 2:
        raise ValueError(f"truth dimensions must be even, got {truth.shape}")
    rng = np.random.default_rng(spec.seed)
    phases = _warp_phases(rng)

    sx, sy = float(spec.global_shift[0]), float(spec.global_shift[1])
    theta = float(spec.global_rotation)
    amp = float(spec.local_warp_amplitude)

    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    if amp > 0.0:
        warp_rows = amp * _warp_component(rows, cols, spec.local_warp_scale, phases[0])
        warp_cols = amp * _warp_component(rows, cols, spec.local_warp_scale, phases[1])
    else:
        warp_rows = np.zeros((h, w))
        warp_cols = np.zeros((h, w))

    if sx != 0.0 or sy != 0.0 or theta != 0.0 or amp > 0.0:
        cy = (h - 1) / 2.0
        cx = (w - 1) / 2.0
        th = np.deg2rad(theta)
        ct, st = np.cos(th), np.sin(th)
        px = cols - cx
        py = rows - cy
        src_c = ct * px - st * py + cx + sx
        src_r = st * px + ct * py + cy + sy
        if amp > 0.0:
            wr = amp * _warp_component(src_r, src_c, spec.local_warp_scale, phases[0])
            wc = amp * _warp_component(src_r, src_c, spec.local_warp_scale, phases[1])
            src_r = src_r + wr
            src_c = src_c + wc
        geom = bicubic_sample(truth, src_r, src_c)
    else:
        geom = truth

    lr_full = geom
    if spec.contrast_gain != 1.0 or spec.contrast_offset != 0.0:
        lr_full = spec.contrast_gain * lr_full + spec.contrast_offset
    if spec.blur_sigma > 0.0:
        lr_full = ndimage.gaussian_filter(lr_full, spec.blur_sigma, mode="nearest")
    lr = downsample(lr_full, 2)

    hr = truth
    if spec.noise_sigma_hr > 0.0:
        hr = hr + rng.normal(0.0, spec.noise_sigma_hr, truth.shape)
    if spec.noise_sigma_lr > 0.0:
        lr = lr + rng.normal(0.0, spec.noise_sigma_lr, lr.shape)
    hr = np.clip(hr, 0.0, 255.0)
    lr = np.clip(lr, 0.0, 255.0)

    pair = ImagePair(hr=hr, lr=lr, pair_id=f"synth-{spec.seed}")
    record = SynthesisRecord(
        transform=GlobalTransform(shift_x=sx, shift_y=sy, theta=theta, mse=0.0),
        warp_rows=warp_rows,
        warp_cols=warp_cols,
        spec=spec,
    )
    return pair, record
