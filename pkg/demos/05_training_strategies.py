"""Self-training versus pooled-training on a small synthetic study.

Each pair gets its own degradation character (blur, noise, contrast). A
model trained on a pair's own training area (self-training) is compared
with a single model trained on all pairs together (pooled-training).

Run:  python demos/05_training_strategies.py   (about a minute)
"""

import numpy as np

from emsr import (
    DegradationSpec,
    ExperimentConfig,
    aggregate_reports,
    make_scene,
    run_pooled_training,
    run_self_training,
    synthesize_pair,
)

N_PAIRS = 4
cfg = ExperimentConfig(n=9, k=10, K=10, L=800, sigma_n=1.0, seed=0, threads=2)

pairs = []
for i in range(N_PAIRS):
    spec = DegradationSpec(
        blur_sigma=0.6 + 0.3 * i,
        noise_sigma_hr=3.0 + 0.6 * i,
        noise_sigma_lr=5.0 + 1.5 * i,
        contrast_gain=0.95 + 0.06 * i,
        contrast_offset=8.0 * i - 12.0,
        global_shift=(3 - 2 * i, 2 * i - 3),
        local_warp_amplitude=1.5,
        seed=i,
    )
    pair, _ = synthesize_pair(make_scene(192, 256, seed=70 + i), spec)
    pair.pair_id = f"pair{i}"
    pairs.append(pair)
print(f"{N_PAIRS} pairs, each with its own blur/noise/contrast character\n")

self_reports = run_self_training(pairs, cfg)
print("self-training (one model per pair):")
print(aggregate_reports(self_reports))

pooled_reports = run_pooled_training(pairs, cfg)
print("\npooled-training (one model for all pairs, held-out area only):")
print(aggregate_reports(pooled_reports))

self_out = np.mean([r.delta_psnr for r in self_reports if not r.in_sample])
pooled_out = np.mean([r.delta_psnr for r in pooled_reports])
print(f"\nheld-out dPSNR: self {self_out:+.2f} dB vs pooled {pooled_out:+.2f} dB")
print("pair-specific noise and contrast make the pair's own training area the"
      " better teacher")
