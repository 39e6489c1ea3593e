"""Face-conditioned semi-fragile watermarking.

Images are HxWx3 uint8 RGB arrays and messages are hex strings.
"""

import torch  # noqa: F401  loads libtorch before the extension

from ._core import (
    Model,
    bit_error_rate,
    calibrate_black_box,
    calibrate_white_box,
    config_digest,
    default_config,
    detection_metrics,
    fake_probability,
    gaussian_blur,
    jpeg_approx,
    jpeg_compress,
    normalize_config,
    psnr,
    random_message,
    ssim,
    verify,
)

__all__ = [
    "Model",
    "bit_error_rate",
    "calibrate_black_box",
    "calibrate_white_box",
    "config_digest",
    "default_config",
    "detection_metrics",
    "fake_probability",
    "gaussian_blur",
    "jpeg_approx",
    "jpeg_compress",
    "normalize_config",
    "psnr",
    "random_message",
    "ssim",
    "verify",
]
