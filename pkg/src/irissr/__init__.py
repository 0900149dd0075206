"""Iris super-resolution evaluation pipeline.

Simulates low-resolution iris images, reconstructs them (interpolation,
eigen-patch PCA hallucination, or external x2 backends chained log2(n) times),
optionally applies iterative image re-projection, and evaluates both image
quality (PSNR/SSIM/FSIM, full frame and iris region) and recognition accuracy
(log-Gabor and SIFT comparators, logistic-regression fusion, EER).
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    dataset,
    eigenpatch,
    fusion_eval,
    iriscode,
    quality,
    raster,
    reproject,
    siftmatch,
    sr,
)
