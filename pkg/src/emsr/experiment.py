"""Experimental protocol: pair registration, subimage partitioning,
self-training versus pooled-training runs, and report aggregation.

A pair is registered globally, cropped to the fully valid overlap, and
partitioned into a grid of subimages. By default the left three of four
columns are the training area and the right column is held out, giving a
75/25 split. Self-training builds one library per pair from its own
training subimages; pooled-training merges every pair's library into one
and evaluates all held-out subimages against it.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .image import as_image, bicubic_upsample, downsample, save_image
from .metrics import EvaluationReport, evaluate
from .nlm import NlmConfig, lbnlm_filter
from .patch_library import build_library, merge_libraries
from .registration import (
    GlobalTransform,
    RegistrationError,
    SearchSpace,
    apply_transform,
    global_register,
    match_patches,
    valid_rectangle,
    write_displacements,
)

__all__ = [
    "ImagePair",
    "PartitionPlan",
    "SubimagePair",
    "ExperimentConfig",
    "GroupStats",
    "AggregateSummary",
    "register_pair",
    "partition_pair",
    "run_self_training",
    "run_pooled_training",
    "aggregate_reports",
    "write_reports_csv",
    "write_summary_csv",
    "load_manifest",
    "run_pipeline",
]

log = logging.getLogger(__name__)


@dataclass
class ImagePair:
    """A high/low-resolution pair of the same scene.

    Before registration the two frames may be misaligned; after
    :func:`register_pair` the HR dimensions are exactly twice the LR
    dimensions and ``registration`` records the applied correction.
    """

    hr: np.ndarray
    lr: np.ndarray
    pair_id: str
    registration: GlobalTransform | None = None


@dataclass
class PartitionPlan:
    """Grid partition with disjoint train/test subimage index sets.

    Indices are row-major (``row * grid_cols + col``). When not given, the
    test set defaults to the rightmost column and the rest trains.
    """

    grid_rows: int = 3
    grid_cols: int = 4
    train_ids: tuple[int, ...] = ()
    test_ids: tuple[int, ...] = ()

    def __post_init__(self):
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValueError("grid must have at least one row and one column")
        total = self.grid_rows * self.grid_cols
        if not self.train_ids and not self.test_ids:
            self.test_ids = tuple(
                r * self.grid_cols + (self.grid_cols - 1) for r in range(self.grid_rows)
            )
            self.train_ids = tuple(i for i in range(total) if i not in self.test_ids)
        if set(self.train_ids) & set(self.test_ids):
            raise ValueError("train and test ids overlap")
        if set(self.train_ids) | set(self.test_ids) != set(range(total)):
            raise ValueError("train and test ids must cover the grid exactly once")


@dataclass
class SubimagePair:
    """One aligned tile: HR subimage with its LR counterpart (2:1)."""

    hr: np.ndarray
    lr: np.ndarray
    index: int
    row: int
    col: int


@dataclass
class ExperimentConfig:
    """All pipeline parameters in one place (defaults are the standard
    operating point: 9x9 patches, 50 categories, 10x oversampling,
    sigma_n = 1, texture variance threshold 100)."""

    n: int = 9
    k: int = 50
    K: int = 10
    L: int = 4000
    sigma_n: float = 1.0
    variance_threshold: float = 100.0
    radius: int = 5
    stride: int = 1
    accelerate: bool = True
    canny_param: float = 0.2
    border: int = 4
    seed: int = 0
    grid_rows: int = 3
    grid_cols: int = 4
    train_ids: tuple[int, ...] = ()
    test_ids: tuple[int, ...] = ()
    search: SearchSpace = field(default_factory=SearchSpace)
    threads: int = 1

    def plan(self) -> PartitionPlan:
        return PartitionPlan(self.grid_rows, self.grid_cols, self.train_ids, self.test_ids)

    def nlm(self) -> NlmConfig:
        return NlmConfig(sigma_n=self.sigma_n, accelerate=self.accelerate, n=self.n)


def register_pair(pair: ImagePair, search: SearchSpace | None = None) -> ImagePair:
    """Globally register a pair and crop it to the aligned overlap.

    The LR image is upsampled x2, aligned to the HR frame by grid search,
    and both frames are cropped to the fully valid overlap with exact 2:1
    dimensions. For pure integer translations the LR side is carved
    directly from the physical LR pixels; under rotation it is carved from
    the registered upsample instead (one extra resampling).
    """
    hr = as_image(pair.hr)
    lr = as_image(pair.lr)
    up = bicubic_upsample(lr, 2)
    t = global_register(hr, up, search)
    reg, mask = apply_transform(up, t, return_mask=True)

    rect = valid_rectangle(mask)
    if rect is None:
        raise RegistrationError(f"pair {pair.pair_id}: no valid overlap after registration")
    top, bottom, left, right = rect
    # the registered frame shares the HR origin but may be larger than it
    bottom = min(bottom, hr.shape[0] - 1)
    right = min(right, hr.shape[1] - 1)
    if top > bottom or left > right:
        raise RegistrationError(f"pair {pair.pair_id}: no valid overlap after registration")

    if t.theta == 0.0:
        sx, sy = int(t.shift_x), int(t.shift_y)
        # align the crop so it maps to whole LR pixels
        top += (top - sy) % 2
        left += (left - sx) % 2
        hh = (bottom + 1 - top) // 2 * 2
        ww = (right + 1 - left) // 2 * 2
        if hh < 2 or ww < 2:
            raise RegistrationError(f"pair {pair.pair_id}: overlap too small")
        lr_aligned = lr[
            (top - sy) // 2 : (top - sy + hh) // 2,
            (left - sx) // 2 : (left - sx + ww) // 2,
        ].copy()
    else:
        top += top % 2
        left += left % 2
        hh = (bottom + 1 - top) // 2 * 2
        ww = (right + 1 - left) // 2 * 2
        if hh < 2 or ww < 2:
            raise RegistrationError(f"pair {pair.pair_id}: overlap too small")
        lr_aligned = downsample(reg[top : top + hh, left : left + ww], 2)

    hr_crop = hr[top : top + hh, left : left + ww].copy()
    return ImagePair(hr=hr_crop, lr=lr_aligned, pair_id=pair.pair_id, registration=t)


def _edges(length: int, parts: int) -> list[int]:
    """Grid cut points; remainder pixels go to the last part."""
    if parts > length:
        raise ValueError(f"cannot split length {length} into {parts} parts")
    base = length // parts
    return [i * base for i in range(parts)] + [length]


def partition_pair(pair: ImagePair, plan: PartitionPlan) -> tuple[list[SubimagePair], list[SubimagePair]]:
    """Split a registered pair into aligned train/test subimage pairs.

    The grid is laid out on the LR frame and scaled x2 for the HR side, so
    every tile keeps the exact 2:1 ratio. Tiles are non-overlapping and
    cover the pair exactly.
    """
    if pair.registration is None:
        raise ValueError(f"pair {pair.pair_id} is not registered; run register_pair first")
    hr, lr = pair.hr, pair.lr
    if hr.shape != (2 * lr.shape[0], 2 * lr.shape[1]):
        raise ValueError(
            f"registered pair must have exact 2:1 dimensions, got {hr.shape} vs {lr.shape}"
        )
    rows = _edges(lr.shape[0], plan.grid_rows)
    cols = _edges(lr.shape[1], plan.grid_cols)
    train: list[SubimagePair] = []
    test: list[SubimagePair] = []
    for r in range(plan.grid_rows):
        for c in range(plan.grid_cols):
            idx = r * plan.grid_cols + c
            r0, r1 = rows[r], rows[r + 1]
            c0, c1 = cols[c], cols[c + 1]
            sub = SubimagePair(
                hr=hr[2 * r0 : 2 * r1, 2 * c0 : 2 * c1].copy(),
                lr=lr[r0:r1, c0:c1].copy(),
                index=idx,
                row=r,
                col=c,
            )
            (train if idx in plan.train_ids else test).append(sub)
    return train, test


def _train_library(train: list[SubimagePair], cfg: ExperimentConfig, dump_dir: Path | None = None):
    pairs = []
    for sub in train:
        up = bicubic_upsample(sub.lr, 2)
        matched = match_patches(
            sub.hr, up, cfg.n, cfg.variance_threshold, cfg.radius, cfg.stride
        )
        if dump_dir is not None:
            write_displacements(matched, dump_dir / f"displacements_{sub.index:02d}.csv")
        pairs.extend(matched)
    return build_library(pairs, cfg.L, cfg.k, cfg.K, cfg.seed)


def _evaluate_subimage(sub, lib, cfg, pair_id, in_sample, out_dir: Path | None = None):
    baseline = bicubic_upsample(sub.lr, 2)
    sr = lbnlm_filter(baseline, lib, cfg.nlm())
    if out_dir is not None:
        save_image(sr, out_dir / f"sr_{sub.index:02d}.png")
    rep = evaluate(sub.hr, sr, baseline, cfg.canny_param, cfg.border)
    rep.pair_id = pair_id
    rep.subimage = sub.index
    rep.in_sample = in_sample
    return rep


def _pair_dir(out_dir: Path | None, pair_id: str) -> Path | None:
    if out_dir is None:
        return None
    d = Path(out_dir) / f"pair_{pair_id}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _self_train_one(pair, cfg, out_dir):
    d = _pair_dir(out_dir, pair.pair_id)
    rp = register_pair(pair, cfg.search)
    if d is not None:
        (d / "registration.json").write_text(rp.registration.to_json() + "\n")
    train, test = partition_pair(rp, cfg.plan())
    lib = _train_library(train, cfg, d)
    reports = [
        _evaluate_subimage(sub, lib, cfg, rp.pair_id, True, d) for sub in train
    ]
    reports += [
        _evaluate_subimage(sub, lib, cfg, rp.pair_id, False, d) for sub in test
    ]
    return reports


def _map_pairs(worker, pairs, cfg):
    """Run a per-pair worker, in order, skipping pairs whose registration
    fails (logged) while letting other errors propagate."""
    outputs = []
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            futures = [pool.submit(worker, p) for p in pairs]
            for pair, fut in zip(pairs, futures):
                try:
                    outputs.append(fut.result())
                except RegistrationError as exc:
                    log.warning("skipping pair %s: %s", pair.pair_id, exc)
                    outputs.append(None)
    else:
        for pair in pairs:
            try:
                outputs.append(worker(pair))
            except RegistrationError as exc:
                log.warning("skipping pair %s: %s", pair.pair_id, exc)
                outputs.append(None)
    return outputs


def run_self_training(
    pairs: list[ImagePair],
    cfg: ExperimentConfig,
    out_dir: Path | str | None = None,
) -> list[EvaluationReport]:
    """Train one library per pair and evaluate that pair with it.

    Training-area subimages are reconstructed too and tagged in-sample;
    held-out subimages are tagged out-of-sample. Reports are ordered by
    pair then subimage index.
    """
    if not pairs:
        raise ValueError("no image pairs")
    out = Path(out_dir) if out_dir is not None else None
    results = _map_pairs(lambda p: _self_train_one(p, cfg, out), pairs, cfg)
    reports: list[EvaluationReport] = []
    for r in results:
        if r is not None:
            reports.extend(sorted(r, key=lambda rep: rep.subimage))
    return reports


def run_pooled_training(
    pairs: list[ImagePair],
    cfg: ExperimentConfig,
    out_dir: Path | str | None = None,
) -> list[EvaluationReport]:
    """Merge every pair's training library into one and evaluate all
    held-out subimages against the pooled model."""
    if not pairs:
        raise ValueError("no image pairs")
    out = Path(out_dir) if out_dir is not None else None
    plan_cfg = cfg.plan()

    def prepare(pair):
        d = _pair_dir(out, pair.pair_id)
        rp = register_pair(pair, cfg.search)
        if d is not None:
            (d / "registration.json").write_text(rp.registration.to_json() + "\n")
        train, test = partition_pair(rp, plan_cfg)
        lib = _train_library(train, cfg, d)
        return rp.pair_id, lib, test, d

    prepared = [p for p in _map_pairs(prepare, pairs, cfg) if p is not None]
    if not prepared:
        raise RegistrationError("all pairs failed to register")
    pooled = merge_libraries([lib for _, lib, _, _ in prepared], k=cfg.k, seed=cfg.seed)

    def evaluate_one(item):
        pair_id, _, test, d = item
        return [_evaluate_subimage(sub, pooled, cfg, pair_id, False, d) for sub in test]

    reports: list[EvaluationReport] = []
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            for chunk in pool.map(evaluate_one, prepared):
                reports.extend(sorted(chunk, key=lambda rep: rep.subimage))
    else:
        for item in prepared:
            reports.extend(sorted(evaluate_one(item), key=lambda rep: rep.subimage))
    return reports


@dataclass
class GroupStats:
    """Aggregate metrics over one report group."""

    label: str
    count: int
    mean_delta_psnr: float
    mean_delta_ssim: float
    failure_pct: float
    mean_fg_delta_psnr: float
    mean_bg_delta_psnr: float
    mean_sim_sr: float
    mean_sim_bicubic: float


@dataclass
class AggregateSummary:
    in_sample: GroupStats | None
    out_of_sample: GroupStats | None

    def groups(self) -> list[GroupStats]:
        return [g for g in (self.in_sample, self.out_of_sample) if g is not None]

    def __str__(self) -> str:
        lines = [
            f"{'group':<14} {'count':>5} {'dPSNR':>8} {'dSSIM':>8} {'fail%':>6} "
            f"{'fg dPSNR':>9} {'bg dPSNR':>9} {'sim(sr)':>8} {'sim(bic)':>9}"
        ]
        for g in self.groups():
            lines.append(
                f"{g.label:<14} {g.count:>5} {g.mean_delta_psnr:>8.3f} "
                f"{g.mean_delta_ssim:>8.4f} {g.failure_pct:>6.1f} "
                f"{g.mean_fg_delta_psnr:>9.3f} {g.mean_bg_delta_psnr:>9.3f} "
                f"{g.mean_sim_sr:>8.3f} {g.mean_sim_bicubic:>9.3f}"
            )
        return "\n".join(lines)


def _group_stats(label: str, reports: list[EvaluationReport]) -> GroupStats:
    def mean(values):
        arr = np.asarray(values, dtype=np.float64)
        return float(np.nanmean(arr)) if arr.size else float("nan")

    failures = sum(1 for r in reports if r.failure)
    return GroupStats(
        label=label,
        count=len(reports),
        mean_delta_psnr=mean([r.delta_psnr for r in reports]),
        mean_delta_ssim=mean([r.delta_ssim for r in reports]),
        failure_pct=100.0 * failures / len(reports),
        mean_fg_delta_psnr=mean([r.fg_delta_psnr for r in reports]),
        mean_bg_delta_psnr=mean([r.bg_delta_psnr for r in reports]),
        mean_sim_sr=mean([r.sim_sr for r in reports]),
        mean_sim_bicubic=mean([r.sim_bicubic for r in reports]),
    )


def aggregate_reports(reports: list[EvaluationReport]) -> AggregateSummary:
    """Mean deltas and failure percentages, split in-sample/out-of-sample."""
    if not reports:
        raise ValueError("no reports to aggregate")
    ins = [r for r in reports if r.in_sample]
    outs = [r for r in reports if not r.in_sample]
    return AggregateSummary(
        in_sample=_group_stats("in-sample", ins) if ins else None,
        out_of_sample=_group_stats("out-of-sample", outs) if outs else None,
    )


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_reports_csv(reports: list[EvaluationReport], path) -> None:
    """One row per subimage, ordered by (pair_id, subimage)."""
    rows = sorted(reports, key=lambda r: (r.pair_id, r.subimage))
    lines = [",".join(EvaluationReport.FIELDS)]
    for r in rows:
        lines.append(",".join(_fmt(getattr(r, name)) for name in EvaluationReport.FIELDS))
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary_csv(summary: AggregateSummary, path) -> None:
    cols = (
        "group,count,mean_delta_psnr,mean_delta_ssim,failure_pct,"
        "mean_fg_delta_psnr,mean_bg_delta_psnr,mean_sim_sr,mean_sim_bicubic"
    )
    lines = [cols]
    for g in summary.groups():
        lines.append(
            ",".join(
                [
                    g.label,
                    str(g.count),
                    _fmt(g.mean_delta_psnr),
                    _fmt(g.mean_delta_ssim),
                    _fmt(g.failure_pct),
                    _fmt(g.mean_fg_delta_psnr),
                    _fmt(g.mean_bg_delta_psnr),
                    _fmt(g.mean_sim_sr),
                    _fmt(g.mean_sim_bicubic),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


_PARAM_KEYS = {
    "n",
    "k",
    "K",
    "L",
    "sigma_n",
    "variance_threshold",
    "radius",
    "stride",
    "accelerate",
    "canny_param",
    "border",
    "seed",
    "grid_rows",
    "grid_cols",
    "threads",
}


def load_manifest(path) -> tuple[list[ImagePair], ExperimentConfig, str, Path]:
    """Read a pipeline manifest (JSON).

    Schema: ``pairs`` (list of {id, hr, lr} with paths relative to the
    manifest), ``strategy`` ("self" or "pooled"), ``output_dir``, and an
    optional ``params`` object overriding :class:`ExperimentConfig` fields.
    """
    from .image import load_image

    path = Path(path)
    data = json.loads(path.read_text())
    base = path.parent
    if "pairs" not in data or not data["pairs"]:
        raise ValueError(f"manifest {path} lists no image pairs")
    pairs = []
    for entry in data["pairs"]:
        pairs.append(
            ImagePair(
                hr=load_image(base / entry["hr"]),
                lr=load_image(base / entry["lr"]),
                pair_id=str(entry["id"]),
            )
        )
    params = data.get("params", {})
    unknown = set(params) - _PARAM_KEYS
    if unknown:
        raise ValueError(f"unknown manifest parameters: {sorted(unknown)}")
    cfg = ExperimentConfig(**params)
    strategy = data.get("strategy", "self")
    if strategy not in ("self", "pooled"):
        raise ValueError(f"unknown strategy {strategy!r} (expected 'self' or 'pooled')")
    out_dir = base / data.get("output_dir", "out")
    return pairs, cfg, strategy, out_dir


def run_pipeline(
    manifest_path,
    strategy: str | None = None,
    threads: int | None = None,
) -> AggregateSummary:
    """Run the full experiment described by a manifest and write all
    outputs (reconstructions, registration records, displacement dumps,
    per-subimage reports, aggregate summary) into its output directory."""
    pairs, cfg, manifest_strategy, out_dir = load_manifest(manifest_path)
    strategy = strategy or manifest_strategy
    if threads is not None:
        cfg = replace(cfg, threads=threads)
    out_dir.mkdir(parents=True, exist_ok=True)
    if strategy == "self":
        reports = run_self_training(pairs, cfg, out_dir)
    elif strategy == "pooled":
        reports = run_pooled_training(pairs, cfg, out_dir)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    if not reports:
        raise RuntimeError("no reports produced (all pairs failed to register)")
    write_reports_csv(reports, out_dir / "reports.csv")
    summary = aggregate_reports(reports)
    write_summary_csv(summary, out_dir / "summary.csv")
    (out_dir / "summary.txt").write_text(str(summary) + "\n")
    return summary
