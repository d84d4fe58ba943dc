"""Stratified paired patch library.

High-resolution patches are clustered with k-means so that every kind of
content (background, boundaries, texture) is represented; the library then
keeps an equal-sized sample from each category together with the matched
registered upsampled-LR patches. Queries are routed to categories by the
Euclidean distance to the per-category mean of the LR-side members, since
queries are themselves upsampled-LR patches.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .registration import PatchPair

__all__ = [
    "PairedLibrary",
    "as_patch_matrix",
    "kmeans_patches",
    "build_library",
    "nearest_category",
    "merge_libraries",
    "save_library",
    "load_library",
]


def as_patch_matrix(patches) -> np.ndarray:
    """Stack patches (list of 2-D arrays, or an array) into (count, dim)."""
    if isinstance(patches, np.ndarray) and patches.ndim == 2:
        return np.ascontiguousarray(patches, dtype=np.float64)
    arrs = [np.asarray(p, dtype=np.float64).reshape(-1) for p in patches]
    if not arrs:
        raise ValueError("no patches given")
    return np.stack(arrs)


@dataclass
class PairedLibrary:
    """Matched (HR, upsampled-LR) patch vectors grouped by category.

    Entries are stored sorted by ``category_ids`` so each category occupies
    a contiguous slice. ``category_means`` are per-category averages of the
    LR-side members, used to route queries.
    """

    n: int
    k: int
    seed: int
    hr: np.ndarray
    lr_up: np.ndarray
    category_ids: np.ndarray
    category_means: np.ndarray
    category_counts: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.category_counts is None:
            self.category_counts = np.bincount(self.category_ids, minlength=self.k)
        if self.hr.shape != self.lr_up.shape or self.hr.shape[1] != self.n * self.n:
            raise ValueError("entry matrices must be (count, n*n) and share shape")
        if self.category_means.shape != (self.k, self.n * self.n):
            raise ValueError("category_means must be (k, n*n)")
        if len(self.category_ids) != len(self.hr):
            raise ValueError("one category id per entry required")
        if np.any(np.diff(self.category_ids) < 0):
            raise ValueError("entries must be sorted by category id")

    def __len__(self) -> int:
        return self.hr.shape[0]

    def category_slice(self, cid: int) -> slice:
        """Contiguous slice of the entries assigned to category ``cid``."""
        starts = np.concatenate(([0], np.cumsum(self.category_counts)))
        return slice(int(starts[cid]), int(starts[cid + 1]))


def kmeans_patches(
    patches,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's k-means on vectorized patch intensities.

    k-means++ seeding from ``seed``; stops when the maximum centroid
    movement drops below ``tol`` or after ``max_iter`` sweeps. Empty
    clusters are re-seeded from the point farthest from its centroid.
    Returns (centroids, assignments); deterministic for a fixed seed.
    """
    X = as_patch_matrix(patches)
    count = X.shape[0]
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if k > count:
        raise ValueError(f"k={k} exceeds patch count {count}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(X, k, rng)
    x_sq = (X * X).sum(axis=1)
    assign = np.zeros(count, dtype=np.int64)
    for _ in range(max_iter):
        d2 = _sqdist(X, centroids, x_sq)
        assign = d2.argmin(axis=1)
        new = np.empty_like(centroids)
        counts = np.bincount(assign, minlength=k)
        for c in range(k):
            members = assign == c
            if counts[c] > 0:
                new[c] = X[members].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            own = d2[np.arange(count), assign].copy()
            for c in empty:
                far = int(own.argmax())
                new[c] = X[far]
                own[far] = -1.0  # do not reuse the same point for another empty cluster
        movement = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if movement < tol:
            break
    d2 = _sqdist(X, centroids, x_sq)
    assign = d2.argmin(axis=1)
    return centroids, assign


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    count = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[int(rng.integers(count))]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(count, p=d2 / total))
        else:
            idx = int(rng.integers(count))
        centroids[c] = X[idx]
        d2 = np.minimum(d2, ((X - centroids[c]) ** 2).sum(axis=1))
    return centroids


def _sqdist(X: np.ndarray, C: np.ndarray, x_sq: np.ndarray) -> np.ndarray:
    d2 = x_sq[:, None] + (C * C).sum(axis=1)[None, :] - 2.0 * (X @ C.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def build_library(
    pairs: list[PatchPair],
    L: int,
    k: int,
    K: int = 10,
    seed: int = 0,
) -> PairedLibrary:
    """Build a stratified library of at most ``L`` patch pairs.

    Samples ``min(K*L, len(pairs))`` pairs without replacement, clusters
    the HR patches into ``k`` categories, and keeps ``L // k`` pairs from
    each (all members when a category is smaller, so the final size may
    fall short of ``L``).
    """
    if not pairs:
        raise ValueError("no patch pairs to build from")
    if k <= 0 or k > L:
        raise ValueError(f"need 0 < k <= L, got k={k}, L={L}")
    n = pairs[0].hr_patch.shape[0]
    for p in pairs:
        if p.hr_patch.shape != (n, n) or p.lr_up_patch.shape != (n, n):
            raise ValueError("all pairs must share the same patch side")
    hr = np.stack([p.hr_patch.reshape(-1) for p in pairs])
    lr = np.stack([p.lr_up_patch.reshape(-1) for p in pairs])

    rng = np.random.default_rng(seed)
    m = min(K * L, len(pairs))
    sel = rng.permutation(len(pairs))[:m]
    sel.sort()
    hr_s, lr_s = hr[sel], lr[sel]
    if k > m:
        raise ValueError(f"k={k} exceeds sampled pair count {m}")

    _, assign = kmeans_patches(hr_s, k, seed=seed)
    per = L // k
    kept: list[np.ndarray] = []
    for c in range(k):
        members = np.flatnonzero(assign == c)
        if members.size > per:
            members = rng.choice(members, size=per, replace=False)
            members.sort()
        kept.append(members)
    return _assemble(n, k, seed, hr_s, lr_s, kept)


def _assemble(n, k, seed, hr, lr, kept_per_category) -> PairedLibrary:
    ids = np.concatenate(
        [np.full(len(mi), c, dtype=np.int32) for c, mi in enumerate(kept_per_category)]
    )
    idx = np.concatenate(kept_per_category)
    lib_hr = hr[idx]
    lib_lr = lr[idx]
    counts = np.bincount(ids, minlength=k)
    means = np.zeros((k, n * n))
    start = 0
    for c in range(k):
        stop = start + counts[c]
        if counts[c] > 0:
            means[c] = lib_lr[start:stop].mean(axis=0)
        start = stop
    return PairedLibrary(
        n=n,
        k=k,
        seed=seed,
        hr=lib_hr,
        lr_up=lib_lr,
        category_ids=ids,
        category_means=means,
        category_counts=counts,
    )


def nearest_category(lib: PairedLibrary, q) -> int:
    """Category whose LR-side mean is closest (Euclidean) to the query.

    Ties resolve to the lowest category id.
    """
    v = np.asarray(q, dtype=np.float64).reshape(-1)
    if v.size != lib.n * lib.n:
        raise ValueError(f"query size {v.size} does not match library patch side {lib.n}")
    d2 = ((lib.category_means - v) ** 2).sum(axis=1)
    return int(d2.argmin())


def merge_libraries(
    libs: list[PairedLibrary],
    k: int | None = None,
    seed: int | None = None,
) -> PairedLibrary:
    """Concatenate the entries of several libraries and re-cluster.

    The entry multiset is preserved exactly; only the category structure is
    rebuilt (with ``k``/``seed`` defaulting to the first library's values).
    """
    if not libs:
        raise ValueError("no libraries to merge")
    n = libs[0].n
    for lib in libs:
        if lib.n != n:
            raise ValueError("libraries disagree on patch side")
    k = libs[0].k if k is None else k
    seed = libs[0].seed if seed is None else seed
    hr = np.concatenate([lib.hr for lib in libs])
    lr = np.concatenate([lib.lr_up for lib in libs])
    if k > len(hr):
        raise ValueError(f"k={k} exceeds merged entry count {len(hr)}")
    _, assign = kmeans_patches(hr, k, seed=seed)
    kept = [np.flatnonzero(assign == c) for c in range(k)]
    return _assemble(n, k, seed, hr, lr, kept)


_LIB_MAGIC = b"EMPL"


def save_library(lib: PairedLibrary, path) -> None:
    """Write the library in the versioned binary format (32-bit floats).

    Loading and re-saving a file reproduces it byte for byte.
    """
    header = _LIB_MAGIC + struct.pack("<IIIQq", 1, lib.n, lib.k, len(lib), lib.seed)
    n2 = lib.n * lib.n
    rec = np.dtype([("cat", "<u4"), ("hr", "<f4", (n2,)), ("lr", "<f4", (n2,))])
    arr = np.empty(len(lib), dtype=rec)
    arr["cat"] = lib.category_ids.astype("<u4")
    arr["hr"] = lib.hr.astype("<f4")
    arr["lr"] = lib.lr_up.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(lib.category_means.astype("<f4").tobytes())
        fh.write(arr.tobytes())


def load_library(path) -> PairedLibrary:
    """Read a library written by :func:`save_library`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _LIB_MAGIC:
        raise ValueError(f"not a paired-library file: {path}")
    version, n, k, count, seed = struct.unpack_from("<IIIQq", raw, 4)
    if version != 1:
        raise ValueError(f"unsupported library file version {version}: {path}")
    n2 = n * n
    offset = 4 + struct.calcsize("<IIIQq")
    means = np.frombuffer(raw, dtype="<f4", count=k * n2, offset=offset)
    means = means.reshape(k, n2).astype(np.float64)
    offset += k * n2 * 4
    rec = np.dtype([("cat", "<u4"), ("hr", "<f4", (n2,)), ("lr", "<f4", (n2,))])
    arr = np.frombuffer(raw, dtype=rec, count=count, offset=offset)
    ids = arr["cat"].astype(np.int32)
    if np.any(np.diff(ids) < 0):
        raise ValueError(f"corrupt library (entries not grouped by category): {path}")
    return PairedLibrary(
        n=int(n),
        k=int(k),
        seed=int(seed),
        hr=arr["hr"].astype(np.float64),
        lr_up=arr["lr"].astype(np.float64),
        category_ids=ids,
        category_means=means,
    )
