import numpy as np
import pytest

from emsr.experiment import (
    ExperimentConfig,
    ImagePair,
    PartitionPlan,
    aggregate_reports,
    partition_pair,
    register_pair,
    run_pooled_training,
    run_self_training,
    write_reports_csv,
)
from emsr.image import downsample
from emsr.metrics import EvaluationReport
from emsr.registration import GlobalTransform, global_register
from emsr.image import bicubic_upsample
from emsr.synthetic import DegradationSpec, make_scene, synthesize_pair

IDENTITY = GlobalTransform(0.0, 0.0, 0.0, 0.0)


def _registered_pair(hr, pair_id="t"):
    lr = downsample(hr, 2)
    return ImagePair(hr=hr, lr=lr, pair_id=pair_id, registration=IDENTITY)


def _report(delta, in_sample=False, pair_id="p", subimage=0):
    return EvaluationReport(
        psnr_sr=30.0 + delta,
        psnr_bicubic=30.0,
        delta_psnr=delta,
        ssim_sr=0.9,
        ssim_bicubic=0.9,
        delta_ssim=0.0,
        fg_delta_psnr=delta,
        bg_delta_psnr=delta,
        sim_sr=0.5,
        sim_bicubic=0.4,
        failure=delta < 0,
        pair_id=pair_id,
        subimage=subimage,
        in_sample=in_sample,
    )


class TestDefaults:
    def test_standard_operating_point(self):
        import inspect

        from emsr.nlm import NlmConfig
        from emsr.patch_library import build_library
        from emsr.registration import match_patches

        cfg = ExperimentConfig()
        assert (cfg.n, cfg.k, cfg.K) == (9, 50, 10)
        assert cfg.sigma_n == 1.0
        assert cfg.variance_threshold == 100.0
        assert cfg.canny_param == 0.2
        assert (cfg.grid_rows, cfg.grid_cols) == (3, 4)
        plan = cfg.plan()
        assert len(plan.train_ids) == 9 and len(plan.test_ids) == 3
        assert NlmConfig().sigma_n == 1.0 and NlmConfig().n == 9
        sig = inspect.signature(match_patches)
        assert sig.parameters["n"].default == 9
        assert sig.parameters["variance_threshold"].default == 100.0
        assert inspect.signature(build_library).parameters["K"].default == 10


class TestPartitionPlan:
    def test_default_split(self):
        plan = PartitionPlan()
        assert plan.test_ids == (3, 7, 11)
        assert len(plan.train_ids) == 9
        assert set(plan.train_ids) | set(plan.test_ids) == set(range(12))

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            PartitionPlan(2, 2, train_ids=(0, 1), test_ids=(1, 2, 3))

    def test_cover_required(self):
        with pytest.raises(ValueError):
            PartitionPlan(2, 2, train_ids=(0,), test_ids=(1,))


class TestPartitionPair:
    def test_reference_geometry(self):
        pair = _registered_pair(np.zeros((944, 1280)))
        train, test = partition_pair(pair, PartitionPlan())
        tiles = train + test
        assert len(tiles) == 12
        heights = sorted({t.hr.shape[0] for t in tiles})
        widths = sorted({t.hr.shape[1] for t in tiles})
        assert heights == [314, 316] and widths == [320]
        assert len(train) == 9 and len(test) == 3
        for t in tiles:
            assert t.hr.shape == (2 * t.lr.shape[0], 2 * t.lr.shape[1])

    def test_toy_grid_tiles_exactly(self):
        rng = np.random.default_rng(0)
        hr = rng.uniform(0, 255, (8, 8))
        pair = _registered_pair(hr)
        train, test = partition_pair(pair, PartitionPlan(2, 2))
        tiles = sorted(train + test, key=lambda t: t.index)
        assert [t.hr.shape for t in tiles] == [(4, 4)] * 4

    def test_reassembly_bit_exact(self):
        rng = np.random.default_rng(1)
        hr = rng.uniform(0, 255, (46, 62))
        pair = _registered_pair(hr)
        train, test = partition_pair(pair, PartitionPlan(3, 4))
        rebuilt = np.zeros_like(hr)
        edges_r = [0, 14, 28, 46]
        edges_c = [0, 14, 28, 42, 62]
        for t in train + test:
            r0, c0 = edges_r[t.row], edges_c[t.col]
            rebuilt[r0 : r0 + t.hr.shape[0], c0 : c0 + t.hr.shape[1]] = t.hr
        assert np.array_equal(rebuilt, hr)

    def test_unregistered_rejected(self):
        pair = ImagePair(hr=np.zeros((8, 8)), lr=np.zeros((4, 4)), pair_id="x")
        with pytest.raises(ValueError, match="not registered"):
            partition_pair(pair, PartitionPlan(2, 2))

    def test_ratio_enforced(self):
        pair = ImagePair(
            hr=np.zeros((9, 8)), lr=np.zeros((4, 4)), pair_id="x", registration=IDENTITY
        )
        with pytest.raises(ValueError, match="2:1"):
            partition_pair(pair, PartitionPlan(2, 2))


class TestSynthesizePair:
    def test_all_zero_spec_is_exact(self):
        truth = make_scene(64, 96, seed=2)
        pair, record = synthesize_pair(truth, DegradationSpec())
        assert np.array_equal(pair.hr, truth)
        assert np.array_equal(pair.lr, downsample(truth, 2))
        assert record.transform == GlobalTransform(0.0, 0.0, 0.0, 0.0)
        assert not record.warp_rows.any() and not record.warp_cols.any()

    def test_deterministic(self):
        truth = make_scene(64, 96, seed=3)
        spec = DegradationSpec(
            blur_sigma=1.0, noise_sigma_hr=4.0, noise_sigma_lr=8.0,
            contrast_gain=1.1, global_shift=(3, -2), local_warp_amplitude=1.5, seed=7
        )
        a, _ = synthesize_pair(truth, spec)
        b, _ = synthesize_pair(truth, spec)
        assert np.array_equal(a.hr, b.hr) and np.array_equal(a.lr, b.lr)

    def test_shift_recovered_by_registration(self):
        truth = make_scene(128, 160, seed=4)
        pair, record = synthesize_pair(truth, DegradationSpec(global_shift=(3, -2), seed=5))
        t = global_register(pair.hr, bicubic_upsample(pair.lr, 2))
        assert (t.shift_x, t.shift_y, t.theta) == (3.0, -2.0, 0.0)

    def test_odd_dims_rejected(self):
        with pytest.raises(ValueError, match="even"):
            synthesize_pair(np.zeros((63, 64)), DegradationSpec())


class TestRegisterPair:
    def test_integer_shift_carves_physical_lr(self):
        truth = make_scene(192, 256, seed=6)
        pair, _ = synthesize_pair(truth, DegradationSpec(global_shift=(4, 2), seed=8))
        rp = register_pair(pair)
        assert rp.registration.theta == 0.0
        assert rp.hr.shape == (2 * rp.lr.shape[0], 2 * rp.lr.shape[1])
        # the carved LR must be a window of the original LR (no resampling)
        h, w = rp.lr.shape
        found = False
        H, W = pair.lr.shape
        for r in range(H - h + 1):
            for c in range(W - w + 1):
                if np.array_equal(pair.lr[r : r + h, c : c + w], rp.lr):
                    found = True
        assert found

    def test_rotated_pair_still_aligns(self):
        truth = make_scene(128, 192, seed=7)
        pair, _ = synthesize_pair(
            truth, DegradationSpec(global_shift=(2, 1), global_rotation=1.0, seed=9)
        )
        rp = register_pair(pair)
        assert abs(rp.registration.theta - 1.0) <= 0.1 + 1e-12
        assert rp.hr.shape == (2 * rp.lr.shape[0], 2 * rp.lr.shape[1])

    def test_hr_window_inside_wider_lr_field(self):
        # the physical geometry: the HR frame covers a quarter of the LR view
        from emsr.registration import SearchSpace

        rng = np.random.default_rng(20)
        truth = make_scene(256, 320, seed=21)
        hr = np.clip(truth[64:192, 80:240] + rng.normal(0, 2.0, (128, 160)), 0, 255)
        lr = downsample(truth, 2)
        pair = ImagePair(hr=hr, lr=lr, pair_id="window")
        search = SearchSpace(max_shift=96, shift_step=4, max_theta=1.0, theta_step=0.5)
        rp = register_pair(pair, search)
        assert (rp.registration.shift_x, rp.registration.shift_y) == (-80.0, -64.0)
        assert rp.hr.shape == (2 * rp.lr.shape[0], 2 * rp.lr.shape[1])
        assert rp.hr.shape[0] >= 120 and rp.hr.shape[1] >= 152


@pytest.fixture(scope="module")
def small_cfg():
    return ExperimentConfig(n=5, k=4, K=10, L=160, radius=3, stride=2, seed=0,
                            grid_rows=2, grid_cols=2, border=2)


@pytest.fixture(scope="module")
def one_pair():
    truth = make_scene(96, 128, seed=8)
    pair, _ = synthesize_pair(
        truth,
        DegradationSpec(blur_sigma=0.8, noise_sigma_hr=3.0, noise_sigma_lr=5.0,
                        contrast_gain=1.05, seed=3),
    )
    pair.pair_id = "solo"
    return pair


class TestRuns:
    def test_self_training_counts(self, one_pair, small_cfg):
        # 2x2 grid: the rightmost column (2 tiles) is held out
        reports = run_self_training([one_pair], small_cfg)
        ins = [r for r in reports if r.in_sample]
        outs = [r for r in reports if not r.in_sample]
        assert len(ins) == 2 and len(outs) == 2

    def test_pooled_counts_and_tags(self, one_pair, small_cfg):
        truth = make_scene(96, 128, seed=9)
        other, _ = synthesize_pair(truth, DegradationSpec(noise_sigma_lr=6.0, seed=4))
        other.pair_id = "other"
        reports = run_pooled_training([one_pair, other], small_cfg)
        assert len(reports) == 4  # two held-out subimages per pair on a 2x2 grid
        assert all(not r.in_sample for r in reports)
        assert {r.pair_id for r in reports} == {"solo", "other"}

    @pytest.mark.parametrize("threads", [1, 2])
    def test_failed_registration_skips_pair(self, one_pair, small_cfg, threads, caplog):
        import dataclasses

        # a 32x32 upsample can never cover half of the 96x128 HR frame
        bad = ImagePair(hr=make_scene(96, 128, seed=11), lr=make_scene(16, 16, seed=11),
                        pair_id="bad")
        cfg = dataclasses.replace(small_cfg, threads=threads)
        with caplog.at_level("WARNING"):
            reports = run_self_training([bad, one_pair], cfg)
        assert {r.pair_id for r in reports} == {"solo"}
        assert any("skipping pair bad" in rec.message for rec in caplog.records)

    def test_identity_degradation_beats_baseline(self):
        # a clean pair only rewards memorization: use a dense library and a
        # near-nearest-neighbor weight scale, and judge the overall mean
        truth = make_scene(192, 256, seed=10)
        pair, _ = synthesize_pair(truth, DegradationSpec(seed=5))
        pair.pair_id = "clean"
        cfg = ExperimentConfig(n=5, k=50, K=10, L=20000, sigma_n=0.1, seed=0, threads=2)
        reports = run_self_training([pair], cfg)
        assert np.mean([r.delta_psnr for r in reports]) > 0.0


class TestAggregation:
    def test_all_positive_zero_failures(self):
        reports = [_report(1.0, subimage=i) for i in range(4)]
        summary = aggregate_reports(reports)
        assert summary.out_of_sample.failure_pct == 0.0

    def test_mean_and_failure_arithmetic(self):
        reports = [_report(1.0, subimage=0), _report(-1.0, subimage=1)]
        summary = aggregate_reports(reports)
        assert summary.out_of_sample.mean_delta_psnr == pytest.approx(0.0, abs=1e-12)
        assert summary.out_of_sample.failure_pct == pytest.approx(50.0)

    def test_split_by_sample(self):
        reports = [_report(2.0, in_sample=True), _report(1.0, in_sample=False)]
        summary = aggregate_reports(reports)
        assert summary.in_sample.mean_delta_psnr == pytest.approx(2.0)
        assert summary.out_of_sample.mean_delta_psnr == pytest.approx(1.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_reports([])

    def test_csv_deterministic(self, tmp_path):
        reports = [_report(0.5, pair_id="b", subimage=1), _report(1.5, pair_id="a", subimage=0)]
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_reports_csv(reports, p1)
        write_reports_csv(list(reversed(reports)), p2)
        assert p1.read_bytes() == p2.read_bytes()
        header = p1.read_text().splitlines()[0]
        assert header.split(",") == list(EvaluationReport.FIELDS)
