"""Training objectives built on the autodiff graph.

Every loss returns a scalar graph tensor (or a :class:`LossBreakdown` whose
``total`` is one). Cross-entropy is a mean over pixels; penalty terms are
means over pixels and classes, i.e. the summed objectives divided by
``N*H*W`` (CE) and ``N*K*H*W`` (penalties). Region-split penalties share the
``N*K*H*W`` divisor, so inner + outer equals the unsplit penalty.

Tensor layout: logits and priors ``(N,K,H,W)``, labels and regions ``(N,H,W)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Tensor
from .priors import INNER, OUTER, classify_regions

CONVENTIONS = ("signed", "absolute")


@dataclass
class LossBreakdown:
    total: Tensor
    ce_term: float
    penalty_term_inner: float
    penalty_term_outer: float
    violation: np.ndarray  # (K, 2) mean of tau_k - l_k per region
    counts: np.ndarray  # (2,) pixels per region

    @property
    def value(self) -> float:
        return self.total.item()


def one_hot(labels, num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError("label out of range")
    return np.moveaxis(np.eye(num_classes, dtype=dtype)[labels], -1, 1)


def _check(logits: Tensor, labels, prior=None):
    if logits.ndim != 4:
        raise ValueError(f"logits must be (N,K,H,W), got {logits.shape}")
    n, k, h, w = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if prior is not None and np.shape(prior) != logits.shape:
        raise ValueError(f"prior shape {np.shape(prior)} does not match logits {logits.shape}")
    return labels


def cross_entropy(graph: Graph, logits: Tensor, labels) -> Tensor:
    labels = _check(logits, labels)
    target = graph.constant(one_hot(labels, logits.shape[1], graph.dtype))
    return graph.mean(graph.softmax_cross_entropy(logits, target))


def violation_matrix(logits, prior, regions):
    """Per-(class, region) mean of ``tau_k - l_k`` and the region pixel counts."""
    diff = np.asarray(prior) - np.asarray(logits)
    regions = np.asarray(regions)
    k = diff.shape[1]
    out = np.zeros((k, 2))
    counts = np.zeros(2, dtype=np.int64)
    for r in (INNER, OUTER):
        mask = regions == r
        counts[r] = int(mask.sum())
        if counts[r]:
            out[:, r] = (diff * mask[:, None]).sum(axis=(0, 2, 3)) / counts[r]
    return out, counts


def _region_weights(lam_matrix, regions, shape, dtype):
    # (K,2) per-class/region values spread over (N,K,H,W)
    lam_matrix = np.asarray(lam_matrix, dtype=float)
    regions = np.asarray(regions)
    per_pixel = np.moveaxis(lam_matrix[:, regions], 0, 1)  # (N,K,H,W)
    return per_pixel.astype(dtype).reshape(shape)


def _split_terms(graph, elementwise: Tensor, regions, divisor):
    regions = np.asarray(regions)
    mask_in = np.broadcast_to((regions == INNER)[:, None], elementwise.shape)
    terms = []
    for mask in (mask_in, ~mask_in):
        m = graph.constant(mask.astype(graph.dtype))
        terms.append(graph.scale(graph.sum(graph.mul(elementwise, m)), 1.0 / divisor))
    return terms


def _breakdown(graph, ce, p_in, p_out, logits, prior, regions):
    total = graph.add(graph.add(ce, p_in), p_out)
    viol, counts = violation_matrix(logits.data, prior, regions)
    return LossBreakdown(total, ce.item(), p_in.item(), p_out.item(), viol, counts)


def crac_fixed_loss(graph: Graph, logits: Tensor, labels, prior, regions, lam_matrix) -> LossBreakdown:
    """CE plus fixed per-class, per-region weights on ``|tau_k - l_k|``."""
    labels = _check(logits, labels, prior)
    lam_matrix = np.asarray(lam_matrix, dtype=float)
    k = logits.shape[1]
    if lam_matrix.shape != (k, 2):
        raise ValueError(f"weight matrix must be ({k}, 2), got {lam_matrix.shape}")
    if np.any(lam_matrix < 0):
        raise ValueError("penalty weights must be non-negative")
    ce = cross_entropy(graph, logits, labels)
    gap = graph.abs(graph.sub(graph.constant(prior), logits))
    weights = graph.constant(_region_weights(lam_matrix, regions, logits.shape, graph.dtype))
    p_in, p_out = _split_terms(graph, graph.mul(gap, weights), regions, gap.data.size)
    return _breakdown(graph, ce, p_in, p_out, logits, prior, regions)


def nacl_loss(graph: Graph, logits: Tensor, labels, prior, lam: float = 0.1, regions=None) -> LossBreakdown:
    """CE plus one uniform weight on ``|tau_k - l_k|``.

    Regions only split the reported penalty; they default to the ground-truth
    3x3 rule.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    labels = _check(logits, labels, prior)
    if regions is None:
        regions = classify_regions(labels)
    k = logits.shape[1]
    return crac_fixed_loss(graph, logits, labels, prior, regions, np.full((k, 2), float(lam)))


def constraint_values(prior, logits, convention: str = "signed"):
    """The argument handed to the penalty: ``tau - l`` or ``|tau - l|``."""
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    z = np.asarray(prior) - np.asarray(logits)
    return z if convention == "signed" else np.abs(z)


def crac_alm_loss(
    graph: Graph, logits: Tensor, labels, prior, regions, state, convention: str = "signed"
) -> LossBreakdown:
    """CE plus PHR(tau_k - l_k, rho_{k,r}, lam_{k,r}) over inner and outer pixels.

    ``state`` is anything with ``lam`` and ``rho`` (K,2) arrays, normally a
    :class:`crac.scheduler.SchedulerState`.
    """
    labels = _check(logits, labels, prior)
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    lam = np.asarray(state.lam, dtype=float)
    rho = np.asarray(state.rho, dtype=float)
    k = logits.shape[1]
    if lam.shape != (k, 2) or rho.shape != (k, 2):
        raise ValueError(f"multipliers and penalty parameters must be ({k}, 2)")
    if np.any(lam <= 0) or np.any(rho <= 0):
        raise ValueError("multipliers and penalty parameters must be positive")
    ce = cross_entropy(graph, logits, labels)
    z = graph.sub(graph.constant(prior), logits)
    if convention == "absolute":
        z = graph.abs(z)
    lam_px = graph.constant(_region_weights(lam, regions, logits.shape, graph.dtype))
    rho_px = graph.constant(_region_weights(rho, regions, logits.shape, graph.dtype))
    pen = graph.phr(z, rho_px, lam_px)
    p_in, p_out = _split_terms(graph, pen, regions, pen.data.size)
    return _breakdown(graph, ce, p_in, p_out, logits, prior, regions)


def _true_log_prob(graph, logits, labels):
    onehot = graph.constant(one_hot(labels, logits.shape[1], graph.dtype))
    return graph.sum(graph.mul(graph.log_softmax(logits), onehot), axis=1)


def focal_loss(graph: Graph, logits: Tensor, labels, gamma: float = 3.0) -> Tensor:
    """Mean of ``-(1 - s_true)**gamma * log s_true``."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    labels = _check(logits, labels)
    logpt = _true_log_prob(graph, logits, labels)
    focus = graph.pow(graph.sub(1.0, graph.exp(logpt)), gamma)
    return graph.scale(graph.mean(graph.mul(focus, logpt)), -1.0)


def label_smoothing_ce(graph: Graph, logits: Tensor, labels, alpha: float = 0.1) -> Tensor:
    """CE against ``(1 - alpha) * onehot + alpha / K`` (targets sum to one)."""
    if not 0 <= alpha < 1:
        raise ValueError("alpha must be in [0, 1)")
    labels = _check(logits, labels)
    k = logits.shape[1]
    target = (1 - alpha) * one_hot(labels, k, graph.dtype) + alpha / k
    return graph.mean(graph.softmax_cross_entropy(logits, graph.constant(target)))


def entropy_penalty_loss(graph: Graph, logits: Tensor, labels, lam: float = 0.1) -> Tensor:
    """CE minus ``lam`` times the mean Shannon entropy of the predictions."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    ce = cross_entropy(graph, logits, labels)
    probs = graph.softmax(logits)
    neg_entropy = graph.sum(graph.mul(probs, graph.log_softmax(logits)), axis=1)
    return graph.add(ce, graph.scale(graph.mean(neg_entropy), lam))


def mean_entropy(logits) -> float:
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-(np.exp(logp) * logp).sum(axis=1).mean())


def margin_logit_loss(graph: Graph, logits: Tensor, labels, lam: float = 0.1, margin: float = 10.0) -> Tensor:
    """CE plus ``lam`` times the mean hinge ``max(0, max_j l_j - l_k - margin)``."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    ce = cross_entropy(graph, logits, labels)
    top = graph.max_channel(logits)
    k = logits.shape[1]
    spread = graph.concat(*([top] * k))
    hinge = graph.relu(graph.add(graph.sub(spread, logits), -float(margin)))
    return graph.add(ce, graph.scale(graph.mean(hinge), lam))


LOSS_KINDS = ("ce", "fl", "ls", "ecp", "mbls", "nacl", "crac-fixed", "crac")
