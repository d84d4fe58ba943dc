"""Rigid alignment of the upsampled low-resolution image to the
high-resolution image, plus per-patch local matching that absorbs the
residual distortion a global transform cannot model.

The global stage is a coarse-to-fine grid search over integer pixel shifts
and a discrete rotation grid, minimizing the mean squared error on the
overlapping area. The local stage maximizes the normalized inner product
between patches, which is insensitive to contrast differences between the
two images.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image import as_image, bicubic_sample, downsample

__all__ = [
    "GlobalTransform",
    "SearchSpace",
    "PatchPair",
    "RegistrationError",
    "global_register",
    "apply_transform",
    "local_register",
    "match_patches",
    "valid_rectangle",
    "write_displacements",
    "save_patch_pairs",
    "load_patch_pairs",
]


class RegistrationError(ValueError):
    """No feasible alignment within the configured search space."""


@dataclass(frozen=True)
class GlobalTransform:
    """Rigid correction: rotate by ``theta`` (degrees) about the image
    center, then shift by (``shift_x``, ``shift_y``) pixels. ``mse`` is the
    alignment residual on the overlapping area."""

    shift_x: float
    shift_y: float
    theta: float
    mse: float = 0.0

    def __post_init__(self):
        if self.mse < 0:
            raise ValueError("mse must be >= 0")

    @property
    def is_identity(self) -> bool:
        return self.shift_x == 0.0 and self.shift_y == 0.0 and self.theta == 0.0

    def to_json(self) -> str:
        return json.dumps(
            {"x": self.shift_x, "y": self.shift_y, "theta": self.theta, "mse": self.mse}
        )

    @classmethod
    def from_json(cls, text: str) -> "GlobalTransform":
        d = json.loads(text)
        return cls(shift_x=d["x"], shift_y=d["y"], theta=d["theta"], mse=d["mse"])


@dataclass(frozen=True)
class SearchSpace:
    """Grid-search configuration for :func:`global_register`.

    Shifts are in full-resolution pixels. The coarse stage scans the full
    range on images block-downsampled by ``coarse_factor``; the fine stage
    refines around the coarse optimum at full resolution.
    """

    max_shift: int = 64
    shift_step: int = 4
    max_theta: float = 5.0
    theta_step: float = 0.5
    coarse_factor: int = 4
    fine_shift: int = 4
    fine_theta: float = 0.5
    fine_theta_step: float = 0.1
    min_overlap: float = 0.5
    mse_border: int = 4

    def __post_init__(self):
        if self.max_shift < 0 or self.shift_step < 1 or self.coarse_factor < 2:
            raise ValueError("invalid shift search configuration")
        if self.max_theta < 0 or self.theta_step <= 0:
            raise ValueError("invalid rotation search configuration")
        if not 0 < self.min_overlap <= 1:
            raise ValueError("min_overlap must be in (0, 1]")
        if self.mse_border < 0:
            raise ValueError("mse_border must be >= 0")


@dataclass
class PatchPair:
    """A matched pair: HR patch at (i + di, j + dj), registered upsampled-LR
    patch at (i, j)."""

    hr_patch: np.ndarray
    lr_up_patch: np.ndarray
    center: tuple[int, int]
    displacement: tuple[int, int]
    rich: bool = False


def apply_transform(img, t: GlobalTransform, return_mask: bool = False):
    """Resample ``img`` under a rigid transform.

    Rotates by ``t.theta`` about the image center, then shifts by
    (``t.shift_x``, ``t.shift_y``), sampling bicubically. Pixels whose
    source coordinate falls outside the frame are zeroed and flagged
    invalid in the optional mask.
    """
    img = as_image(img)
    h, w = img.shape
    if t.theta == 0.0 and t.shift_x == int(t.shift_x) and t.shift_y == int(t.shift_y):
        out, mask = _integer_shift(img, int(t.shift_y), int(t.shift_x))
    else:
        cy = (h - 1) / 2.0
        cx = (w - 1) / 2.0
        rows, cols = np.mgrid[0:h, 0:w]
        px = cols - cx - t.shift_x
        py = rows - cy - t.shift_y
        th = np.deg2rad(t.theta)
        ct, st = np.cos(th), np.sin(th)
        src_c = ct * px + st * py + cx
        src_r = -st * px + ct * py + cy
        out = bicubic_sample(img, src_r, src_c)
        mask = (src_r >= 0) & (src_r <= h - 1) & (src_c >= 0) & (src_c <= w - 1)
        out = np.where(mask, out, 0.0)
    if return_mask:
        return out, mask
    return out


def _integer_shift(img: np.ndarray, dy: int, dx: int):
    """Exact translation: out[r, c] = img[r - dy, c - dx] where in bounds."""
    h, w = img.shape
    out = np.zeros_like(img)
    mask = np.zeros(img.shape, dtype=bool)
    r0, r1 = max(0, dy), min(h, h + dy)
    c0, c1 = max(0, dx), min(w, w + dx)
    if r0 < r1 and c0 < c1:
        out[r0:r1, c0:c1] = img[r0 - dy : r1 - dy, c0 - dx : c1 - dx]
        mask[r0:r1, c0:c1] = True
    return out, mask


def valid_rectangle(mask: np.ndarray):
    """Fully-valid axis-aligned rectangle (top, bottom, left, right),
    inclusive, found by greedily trimming the edge with the most invalid
    pixels. Exact for untouched masks and near-maximal for the slightly
    rotated ones this pipeline produces. Returns None when empty."""
    if not mask.any():
        return None
    rows_any = mask.any(axis=1)
    cols_any = mask.any(axis=0)
    top = int(rows_any.argmax())
    bottom = int(len(rows_any) - 1 - rows_any[::-1].argmax())
    left = int(cols_any.argmax())
    right = int(len(cols_any) - 1 - cols_any[::-1].argmax())
    while top <= bottom and left <= right:
        bad_top = int(np.count_nonzero(~mask[top, left : right + 1]))
        bad_bottom = int(np.count_nonzero(~mask[bottom, left : right + 1]))
        bad_left = int(np.count_nonzero(~mask[top : bottom + 1, left]))
        bad_right = int(np.count_nonzero(~mask[top : bottom + 1, right]))
        worst = max(bad_top, bad_bottom, bad_left, bad_right)
        if worst == 0:
            return top, bottom, left, right
        if bad_top == worst:
            top += 1
        elif bad_bottom == worst:
            bottom -= 1
        elif bad_left == worst:
            left += 1
        else:
            right -= 1
    return None


def _theta_grid(center: float, half_range: float, step: float) -> list[float]:
    m = int(round(half_range / step))
    return [center + i * step for i in range(-m, m + 1)]


def _scan_shifts(hr, moving, rect, shifts_y, shifts_x, theta, min_overlap, best):
    """Scan integer shifts of ``moving`` (valid on ``rect``) against ``hr``,
    updating ``best`` = (key, result) in place via return."""
    t, b, l, r = rect
    hh, ww = hr.shape
    min_area = min_overlap * hh * ww
    for sy in shifts_y:
        r0 = max(0, t + sy)
        r1 = min(hh - 1, b + sy)
        if r0 > r1:
            continue
        for sx in shifts_x:
            c0 = max(0, l + sx)
            c1 = min(ww - 1, r + sx)
            if c0 > c1:
                continue
            if (r1 - r0 + 1) * (c1 - c0 + 1) < min_area:
                continue
            d = hr[r0 : r1 + 1, c0 : c1 + 1] - moving[r0 - sy : r1 + 1 - sy, c0 - sx : c1 + 1 - sx]
            mse = float(np.mean(d * d))
            key = (mse, abs(theta), abs(sx) + abs(sy), theta, sx, sy)
            if best is None or key < best[0]:
                best = (key, (sx, sy, theta, mse))
    return best


def _grid_search(hr, up, thetas, shifts_y, shifts_x, min_overlap, margin):
    best = None
    for theta in thetas:
        if theta == 0.0:
            moving, mask = up, np.ones(up.shape, dtype=bool)
        else:
            moving, mask = apply_transform(up, GlobalTransform(0.0, 0.0, theta), return_mask=True)
        rect = valid_rectangle(mask)
        if rect is None:
            continue
        # compare all candidates on equally eroded domains: the frame border
        # carries resampling residuals that would otherwise favor whichever
        # rotation happens to crop it away
        t, b, l, r = rect
        t, b, l, r = t + margin, b - margin, l + margin, r - margin
        if t > b or l > r:
            continue
        best = _scan_shifts(hr, moving, (t, b, l, r), shifts_y, shifts_x, theta, min_overlap, best)
    return best


def global_register(hr, up, search: SearchSpace | None = None) -> GlobalTransform:
    """Find the rigid transform aligning ``up`` to ``hr``.

    Coarse-to-fine grid search minimizing the overlap MSE; requires the
    overlap to cover at least ``search.min_overlap`` of the ``hr`` area.
    Ties break toward the smallest (|theta|, |x|+|y|), then lexicographic
    (theta, x, y), so the result is deterministic.
    """
    hr = as_image(hr)
    up = as_image(up)
    search = search or SearchSpace()
    cf = search.coarse_factor

    if min(hr.shape) < cf or min(up.shape) < cf:
        raise RegistrationError("images too small for the coarse search stage")

    hr_c = downsample(hr, cf)
    up_c = downsample(up, cf)
    coarse_range = search.max_shift // cf
    coarse_step = max(1, search.shift_step // cf)
    coarse_shifts = list(range(-coarse_range, coarse_range + 1, coarse_step))
    thetas = _theta_grid(0.0, search.max_theta, search.theta_step)

    coarse_margin = max(1, search.mse_border // cf)
    best = _grid_search(
        hr_c, up_c, thetas, coarse_shifts, coarse_shifts, search.min_overlap, coarse_margin
    )
    if best is None:
        raise RegistrationError("search space empty or overlap constraint unsatisfiable")
    sx0, sy0, th0, _ = best[1]
    sx0 *= cf
    sy0 *= cf

    fine_sx = list(range(sx0 - search.fine_shift, sx0 + search.fine_shift + 1))
    fine_sy = list(range(sy0 - search.fine_shift, sy0 + search.fine_shift + 1))
    fine_th = _theta_grid(th0, search.fine_theta, search.fine_theta_step)
    best = _grid_search(hr, up, fine_th, fine_sy, fine_sx, search.min_overlap, search.mse_border)
    if best is None:
        raise RegistrationError("overlap constraint unsatisfiable at full resolution")
    sx, sy, theta, mse = best[1]
    return GlobalTransform(shift_x=float(sx), shift_y=float(sy), theta=float(theta), mse=mse)


def _local_search(hr: np.ndarray, reg: np.ndarray, i: int, j: int, n: int, radius: int):
    """Core of local_register; assumes margins already validated."""
    half = n // 2
    q = reg[i - half : i + half + 1, j - half : j + half + 1].reshape(-1)
    qn = float(np.sqrt(q @ q))
    if qn == 0.0:
        raise ValueError(f"degenerate patch: zero-norm query at {(i, j)}")
    win = hr[i - half - radius : i + half + radius + 1, j - half - radius : j + half + radius + 1]
    side = 2 * radius + 1
    cands = sliding_window_view(win, (n, n)).reshape(side * side, n * n)
    norms = np.sqrt((cands * cands).sum(axis=1))
    sims = cands @ q
    ok = norms > 0.0
    if not ok.any():
        raise ValueError(f"degenerate patch: all zero-norm candidates near {(i, j)}")
    sims = np.where(ok, sims / np.where(ok, norms * qn, 1.0), -np.inf)
    top = sims.max()
    ties = np.flatnonzero(sims == top)
    if ties.size > 1:
        di = ties // side - radius
        dj = ties % side - radius
        order = np.lexsort((dj, di, di * di + dj * dj))
        pick = int(ties[order[0]])
    else:
        pick = int(ties[0])
    return i + pick // side - radius, j + pick % side - radius


def local_register(hr, reg, center: tuple[int, int], n: int, radius: int) -> tuple[int, int]:
    """Match the patch of ``reg`` centered at (i, j) against HR patches in a
    square neighborhood, maximizing the normalized inner product.

    The criterion is invariant to positive rescaling of either patch, which
    makes it robust to contrast differences. Ties break toward the smallest
    displacement magnitude, then lexicographic (di, dj). Returns the matched
    HR center (i*, j*).
    """
    hr = as_image(hr)
    reg = as_image(reg)
    if n % 2 == 0 or n < 3:
        raise ValueError(f"patch side must be odd and >= 3, got {n}")
    if radius < 0:
        raise ValueError(f"search radius must be >= 0, got {radius}")
    i, j = int(center[0]), int(center[1])
    half = n // 2
    if not (half <= i < reg.shape[0] - half and half <= j < reg.shape[1] - half):
        raise ValueError(f"patch center {(i, j)} not interior in the registered image")
    m = half + radius
    if not (m <= i < hr.shape[0] - m and m <= j < hr.shape[1] - m):
        raise ValueError(f"candidate window around {(i, j)} not interior in the HR image")
    return _local_search(hr, reg, i, j, n, radius)


def match_patches(
    hr,
    reg,
    n: int = 9,
    variance_threshold: float = 100.0,
    radius: int = 5,
    stride: int = 1,
) -> list[PatchPair]:
    """Harvest matched patch pairs from a globally registered image pair.

    Candidate centers iterate on ``stride``. Patches whose registered-side
    variance exceeds ``variance_threshold`` (rich texture) get a local
    registration; the rest pair in place with displacement (0, 0).
    """
    hr = as_image(hr)
    reg = as_image(reg)
    if hr.shape != reg.shape:
        raise ValueError(f"image shapes differ: {hr.shape} vs {reg.shape}")
    if n % 2 == 0 or n < 3:
        raise ValueError(f"patch side must be odd and >= 3, got {n}")
    if radius < 0:
        raise ValueError(f"search radius must be >= 0, got {radius}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    half = n // 2
    margin = half + radius
    h, w = hr.shape
    pairs: list[PatchPair] = []
    for i in range(margin, h - margin, stride):
        for j in range(margin, w - margin, stride):
            rp = reg[i - half : i + half + 1, j - half : j + half + 1]
            rich = float(rp.var()) > variance_threshold
            if rich:
                ii, jj = _local_search(hr, reg, i, j, n, radius)
            else:
                ii, jj = i, j
            pairs.append(
                PatchPair(
                    hr_patch=hr[ii - half : ii + half + 1, jj - half : jj + half + 1].copy(),
                    lr_up_patch=rp.copy(),
                    center=(i, j),
                    displacement=(ii - i, jj - j),
                    rich=rich,
                )
            )
    return pairs


def write_displacements(pairs: list[PatchPair], path) -> None:
    """Dump one ``i,j,di,dj`` record per rich-texture pair (CSV)."""
    lines = ["i,j,di,dj"]
    for p in pairs:
        if p.rich:
            lines.append(f"{p.center[0]},{p.center[1]},{p.displacement[0]},{p.displacement[1]}")
    Path(path).write_text("\n".join(lines) + "\n")


_PAIRS_MAGIC = b"EMPP"


def save_patch_pairs(pairs: list[PatchPair], path) -> None:
    """Serialize matched pairs to a little-endian binary file."""
    if not pairs:
        raise ValueError("no patch pairs to save")
    n = pairs[0].hr_patch.shape[0]
    rec = np.dtype(
        [
            ("i", "<i4"),
            ("j", "<i4"),
            ("di", "<i4"),
            ("dj", "<i4"),
            ("rich", "<u4"),
            ("hr", "<f4", (n * n,)),
            ("lr", "<f4", (n * n,)),
        ]
    )
    arr = np.empty(len(pairs), dtype=rec)
    for idx, p in enumerate(pairs):
        if p.hr_patch.shape != (n, n) or p.lr_up_patch.shape != (n, n):
            raise ValueError("all pairs must share the same patch side")
        arr[idx] = (
            p.center[0],
            p.center[1],
            p.displacement[0],
            p.displacement[1],
            1 if p.rich else 0,
            p.hr_patch.reshape(-1).astype("<f4"),
            p.lr_up_patch.reshape(-1).astype("<f4"),
        )
    header = _PAIRS_MAGIC + struct.pack("<IIQ", 1, n, len(pairs))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def load_patch_pairs(path) -> list[PatchPair]:
    """Read pairs written by :func:`save_patch_pairs`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _PAIRS_MAGIC:
        raise ValueError(f"not a patch-pair file: {path}")
    version, n, count = struct.unpack_from("<IIQ", raw, 4)
    if version != 1:
        raise ValueError(f"unsupported patch-pair file version {version}: {path}")
    rec = np.dtype(
        [
            ("i", "<i4"),
            ("j", "<i4"),
            ("di", "<i4"),
            ("dj", "<i4"),
            ("rich", "<u4"),
            ("hr", "<f4", (n * n,)),
            ("lr", "<f4", (n * n,)),
        ]
    )
    arr = np.frombuffer(raw, dtype=rec, count=count, offset=4 + 16)
    pairs = []
    for row in arr:
        pairs.append(
            PatchPair(
                hr_patch=row["hr"].astype(np.float64).reshape(n, n),
                lr_up_patch=row["lr"].astype(np.float64).reshape(n, n),
                center=(int(row["i"]), int(row["j"])),
                displacement=(int(row["di"]), int(row["dj"])),
                rich=bool(row["rich"]),
            )
        )
    return pairs
