"""Patch class-count priors and inner/outer region masks from ground truth."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

INNER = 0
OUTER = 1


def _check(labels, patch_size):
    if patch_size < 1 or patch_size % 2 == 0:
        raise ValueError(f"patch_size must be odd and positive, got {patch_size}")
    labels = np.asarray(labels)
    if labels.ndim not in (2, 3) or labels.min(initial=0) < 0:
        raise ValueError("labels must be a (H,W) or (N,H,W) array of class indices >= 0")
    return labels


def _patches(labels, patch_size):
    # replicate padding keeps every patch full, so counts always sum to d
    p = patch_size // 2
    pad = [(0, 0)] * (labels.ndim - 2) + [(p, p), (p, p)]
    padded = np.pad(labels, pad, mode="edge")
    return sliding_window_view(padded, (patch_size, patch_size), axis=(-2, -1))


def compute_prior(labels, num_classes: int, patch_size: int = 3, normalize: bool = False):
    """Per-pixel class counts over the ``patch_size`` x ``patch_size`` patch.

    Returns an array with a class axis inserted before the spatial axes:
    ``(K,H,W)`` for one label map, ``(N,K,H,W)`` for a batch. With
    ``normalize`` the counts are divided by ``d = patch_size**2``.
    """
    labels = _check(labels, patch_size)
    if labels.max(initial=0) >= num_classes:
        raise ValueError("label value exceeds num_classes")
    win = _patches(labels, patch_size)
    counts = np.stack(
        [(win == k).sum(axis=(-2, -1)) for k in range(num_classes)], axis=-3
    ).astype(np.float64)
    if normalize:
        counts /= patch_size * patch_size
    return counts


def classify_regions(labels, patch_size: int = 3):
    """0 (inner) where the patch holds a single class, 1 (outer) otherwise."""
    labels = _check(labels, patch_size)
    win = _patches(labels, patch_size)
    flat = win.reshape(*win.shape[:-2], -1)
    uniform = (flat == flat[..., :1]).all(axis=-1)
    return np.where(uniform, INNER, OUTER).astype(np.uint8)


def fraction_outer(regions) -> float:
    regions = np.asarray(regions)
    return float((regions == OUTER).mean())
