"""Paired-image super-resolution for electron microscope images.

Pipeline: register a physically captured high/low-resolution pair (global
rigid alignment plus per-patch local matching), build a stratified library
of matched patch pairs, and reconstruct the low-resolution area with a
library-based non-local-mean filter. A metric suite and an experiment
harness with a synthetic pair generator round out the package.
"""

__version__ = "0.1.0"

from .experiment import (
    AggregateSummary,
    ExperimentConfig,
    ImagePair,
    PartitionPlan,
    aggregate_reports,
    partition_pair,
    register_pair,
    run_pipeline,
    run_pooled_training,
    run_self_training,
)
from .image import (
    bicubic_upsample,
    downsample,
    extract_patch,
    load_image,
    patch_variance,
    save_image,
)
from .metrics import (
    EvaluationReport,
    canny,
    edge_similarity,
    evaluate,
    masked_psnr,
    otsu_mask,
    psnr,
    ssim,
)
from .nlm import NlmConfig, compute_weights, lbnlm_filter, reconstruct_patch, super_resolve
from .patch_library import (
    PairedLibrary,
    build_library,
    kmeans_patches,
    load_library,
    merge_libraries,
    nearest_category,
    save_library,
)
from .registration import (
    GlobalTransform,
    PatchPair,
    RegistrationError,
    SearchSpace,
    apply_transform,
    global_register,
    local_register,
    match_patches,
)
from .synthetic import DegradationSpec, make_scene, synthesize_pair
