"""Unpaired domain-adaptation segmentation workbench.

Thin wrapper around the C++ core; see the project README for the CLI and the
full training pipeline.
"""

from psigan._core import (  # noqa: F401
    __version__,
    adversarial_loss,
    aggregate_soi_probability,
    build_dataset,
    compute_landmarks,
    cross_entropy,
    cycle_loss,
    dice,
    evaluate,
    hd95,
    kl_intensity_divergence,
    landmark_standardize,
    lr_at,
    normalize_signed_unit,
    pair_channels,
    pair_stacks,
    percentile_clip,
    receptive_field,
    receptive_field_paper,
    render_sample,
    total_generator_objective,
    train,
    translate,
)
