import numpy as np
import pytest

from emsr.experiment import ExperimentConfig, run_pooled_training, run_self_training
from emsr.synthetic import DegradationSpec, make_scene, synthesize_pair


@pytest.fixture(scope="session")
def truth_scenes():
    """Ten ground-truth scenes shared by the heavy experiment fixtures."""
    return [make_scene(192, 256, seed=50 + i) for i in range(10)]


def _experiment_config():
    return ExperimentConfig(n=9, k=10, K=10, L=800, sigma_n=1.0, seed=0, threads=2)


@pytest.fixture(scope="session")
def fixed_degradation_workload(truth_scenes):
    """Self-training over 10 pairs sharing one degradation setting
    (blur 1, LR noise 8, HR noise 4, gain 1.1, warp <= 2 px)."""
    import time

    rng = np.random.default_rng(42)
    pairs = []
    for i, truth in enumerate(truth_scenes):
        spec = DegradationSpec(
            blur_sigma=1.0,
            noise_sigma_hr=4.0,
            noise_sigma_lr=8.0,
            contrast_gain=1.1,
            global_shift=(int(rng.integers(-8, 9)), int(rng.integers(-8, 9))),
            global_rotation=0.0,
            local_warp_amplitude=2.0,
            local_warp_scale=48.0,
            seed=i,
        )
        pair, _ = synthesize_pair(truth, spec)
        pair.pair_id = f"fixed{i:02d}"
        pairs.append(pair)
    start = time.monotonic()
    reports = run_self_training(pairs, _experiment_config())
    elapsed = time.monotonic() - start
    return {"reports": reports, "seconds": elapsed}


@pytest.fixture(scope="session")
def distinct_degradation_workload(truth_scenes):
    """Self- and pooled-training over the same 10 scenes, each pair
    degraded with its own blur/noise/contrast setting."""
    rng = np.random.default_rng(9)
    pairs = []
    for i, truth in enumerate(truth_scenes):
        spec = DegradationSpec(
            blur_sigma=0.6 + 0.13 * i,
            noise_sigma_hr=3.0 + 0.3 * i,
            noise_sigma_lr=5.0 + 0.8 * i,
            contrast_gain=0.92 + 0.03 * i,
            contrast_offset=-18.0 + 4.0 * i,
            global_shift=(int(rng.integers(-8, 9)), int(rng.integers(-8, 9))),
            global_rotation=0.0,
            local_warp_amplitude=1.5,
            local_warp_scale=48.0,
            seed=i,
        )
        pair, _ = synthesize_pair(truth, spec)
        pair.pair_id = f"mix{i:02d}"
        pairs.append(pair)
    cfg = _experiment_config()
    return {
        "self": run_self_training(pairs, cfg),
        "pooled": run_pooled_training(pairs, cfg),
    }
