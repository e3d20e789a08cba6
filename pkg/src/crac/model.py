"""Small two-level encoder-decoder (U-Net style) producing per-pixel logits.

Architecture (``C_in`` input channels, ``K`` classes)::

    name        kernel shape        in -> out     resolution
    enc1.conv1  (8,  C_in, 3, 3)    C_in -> 8     H
    enc1.conv2  (8,  8,  3, 3)      8 -> 8        H
    enc2.conv1  (16, 8,  3, 3)      8 -> 16       H/2   (after max-pool)
    enc2.conv2  (16, 16, 3, 3)      16 -> 16      H/2
    mid.conv1   (32, 16, 3, 3)      16 -> 32      H/4   (after max-pool)
    mid.conv2   (32, 32, 3, 3)      32 -> 32      H/4
    dec2.conv1  (16, 48, 3, 3)      32+16 -> 16   H/2   (upsample, concat enc2)
    dec2.conv2  (16, 16, 3, 3)      16 -> 16      H/2
    dec1.conv1  (8,  24, 3, 3)      16+8 -> 8     H     (upsample, concat enc1)
    dec1.conv2  (8,  8,  3, 3)      8 -> 8        H
    head        (K,  8,  1, 1)      8 -> K        H

Each ``*.weight`` has a matching ``*.bias`` of length ``out``. Every 3x3
conv is followed by relu; the head is linear.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Graph, Tensor

ENC = (8, 16, 32)


def layer_table(num_classes: int, in_channels: int = 1) -> list[tuple[str, tuple[int, ...]]]:
    c1, c2, c3 = ENC
    return [
        ("enc1.conv1", (c1, in_channels, 3, 3)),
        ("enc1.conv2", (c1, c1, 3, 3)),
        ("enc2.conv1", (c2, c1, 3, 3)),
        ("enc2.conv2", (c2, c2, 3, 3)),
        ("mid.conv1", (c3, c2, 3, 3)),
        ("mid.conv2", (c3, c3, 3, 3)),
        ("dec2.conv1", (c2, c3 + c2, 3, 3)),
        ("dec2.conv2", (c2, c2, 3, 3)),
        ("dec1.conv1", (c1, c2 + c1, 3, 3)),
        ("dec1.conv2", (c1, c1, 3, 3)),
        ("head", (num_classes, c1, 1, 1)),
    ]


def build(seed: int, num_classes: int, in_channels: int = 1, dtype=np.float32) -> dict[str, np.ndarray]:
    """He-normal kernels and zero biases, drawn in table order from ``seed``."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in layer_table(num_classes, in_channels):
        fan_in = shape[1] * shape[2] * shape[3]
        params[f"{name}.weight"] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
        params[f"{name}.bias"] = np.zeros(shape[0], dtype=dtype)
    return params


def parameter_count(params: dict[str, np.ndarray]) -> int:
    return sum(int(v.size) for v in params.values())


def bind(graph: Graph, params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {name: graph.param(value, name) for name, value in params.items()}


def forward(graph: Graph, p: dict[str, Tensor], images) -> Tensor:
    """Logits ``(N,K,H,W)`` for ``images`` ``(N,C,H,W)``; H and W divisible by 4."""
    x = images if isinstance(images, Tensor) else graph.constant(images)
    if x.ndim != 4:
        raise ValueError(f"expected a (N,C,H,W) batch, got shape {x.shape}")
    if x.shape[2] % 4 or x.shape[3] % 4:
        raise ValueError(f"spatial extents {x.shape[2:]} must be divisible by 4")

    def block(h, prefix):
        h = graph.relu(graph.conv2d(h, p[f"{prefix}.conv1.weight"], p[f"{prefix}.conv1.bias"]))
        return graph.relu(graph.conv2d(h, p[f"{prefix}.conv2.weight"], p[f"{prefix}.conv2.bias"]))

    e1 = block(x, "enc1")
    e2 = block(graph.max_pool2(e1), "enc2")
    m = block(graph.max_pool2(e2), "mid")
    d2 = block(graph.concat(graph.upsample2(m), e2), "dec2")
    d1 = block(graph.concat(graph.upsample2(d2), e1), "dec1")
    return graph.conv2d(d1, p["head.weight"], p["head.bias"])


def predict_logits(params: dict[str, np.ndarray], images, batch_size: int = 16) -> np.ndarray:
    """Graph-free convenience: logits for a stack of images, in batches."""
    dtype = next(iter(params.values())).dtype
    out = []
    for start in range(0, len(images), batch_size):
        g = Graph(dtype)
        p = {k: g.constant(v) for k, v in params.items()}
        out.append(forward(g, p, images[start : start + batch_size]).data)
    return np.concatenate(out) if out else np.zeros((0,))
