"""Building a stratified paired patch library.

Harvests matched patches from a registered pair, clusters the HR patches,
samples an equal number from each category, and renders the library as two
contact sheets (HR side and upsampled-LR side, one row per category).

Run:  python demos/02_paired_library.py
"""

from pathlib import Path

import numpy as np

from emsr import (
    DegradationSpec,
    bicubic_upsample,
    build_library,
    make_scene,
    match_patches,
    save_image,
    save_library,
    synthesize_pair,
)
from emsr.experiment import register_pair

OUT = Path(__file__).parent / "output" / "library"
OUT.mkdir(parents=True, exist_ok=True)

truth = make_scene(256, 320, seed=12)
pair, _ = synthesize_pair(
    truth,
    DegradationSpec(blur_sigma=1.0, noise_sigma_hr=4.0, noise_sigma_lr=8.0,
                    contrast_gain=1.1, seed=5),
)
aligned = register_pair(pair)
up = bicubic_upsample(aligned.lr, 2)

pairs = match_patches(aligned.hr, up, n=9, variance_threshold=100.0, radius=5)
print(f"harvested {len(pairs)} patch pairs "
      f"({sum(p.rich for p in pairs)} locally registered)")

lib = build_library(pairs, L=800, k=10, K=10, seed=1)
print(f"library: {len(lib)} entries, per-category counts {lib.category_counts.tolist()}")
save_library(lib, OUT / "library.bin")


def contact_sheet(matrix, ids, n, per_row=40):
    """One row of patches per category, separated by 1-px gutters."""
    k = ids.max() + 1
    sheet = np.full((k * (n + 1) + 1, per_row * (n + 1) + 1), 255.0)
    for cat in range(k):
        members = np.flatnonzero(ids == cat)[:per_row]
        for col, idx in enumerate(members):
            r0 = 1 + cat * (n + 1)
            c0 = 1 + col * (n + 1)
            sheet[r0 : r0 + n, c0 : c0 + n] = matrix[idx].reshape(n, n)
    return sheet


save_image(contact_sheet(lib.hr, lib.category_ids, lib.n), OUT / "hr_patches.png")
save_image(contact_sheet(lib.lr_up, lib.category_ids, lib.n), OUT / "lrup_patches.png")
print(f"contact sheets written to {OUT}")
