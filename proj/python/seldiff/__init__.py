"""Selective-noising unlearning for diffusion models."""

from ._core import (
    Config,
    Dataset,
    Denoiser,
    forget_hit_rate,
    load_checkpoint,
    low_pass,
    make_dataset,
    psd_radial,
    retain_coverage,
    run_unlearn,
    sample,
    save_checkpoint,
    sscd_norm,
    time_window_pmf,
    train_base,
)

__all__ = [
    "Config",
    "Dataset",
    "Denoiser",
    "forget_hit_rate",
    "load_checkpoint",
    "low_pass",
    "make_dataset",
    "psd_radial",
    "retain_coverage",
    "run_unlearn",
    "sample",
    "save_checkpoint",
    "sscd_norm",
    "time_window_pmf",
    "train_base",
]
