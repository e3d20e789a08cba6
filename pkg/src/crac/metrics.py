"""Segmentation and calibration metrics.

Conventions fixed here:

* prediction = argmax of the logits, ties to the lowest class index;
  confidence = max softmax probability.
* ECE uses equal-width bins over (0, 1]; a confidence of exactly 0 falls in
  the first bin. It is scored on pixels whose ground truth is foreground.
* TACE drops per-class confidences below the threshold, splits the rest into
  equal-mass ranges, and averages |acc - conf| over the non-empty cells.
* HD95 is the 95th percentile (linear interpolation) of the pooled
  boundary-to-boundary nearest distances in both directions. A boundary pixel
  is a mask pixel with a 4-neighbour outside the mask or the image.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

HIST_RANGE = (-20.0, 20.0)
HIST_BINS = 40
HIST_ROLES = ("winner", "runner_up", "true_class")


def softmax(logits, axis=1):
    logits = np.asarray(logits, dtype=float)
    e = np.exp(logits - logits.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def dice(prediction, labels, k: int) -> float:
    a = np.asarray(prediction) == k
    b = np.asarray(labels) == k
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


def boundary(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(2, 1), border_value=0)
    return mask & ~interior


def _directed(src, dst):
    # Euclidean distance from every src pixel to the nearest dst pixel
    dist = ndimage.distance_transform_edt(~dst)
    return dist[src]


def hd95(prediction, labels, k: int) -> float:
    a = np.asarray(prediction) == k
    b = np.asarray(labels) == k
    if not a.any() and not b.any():
        return 0.0
    if not a.any() or not b.any():
        return float(np.hypot(*a.shape))
    ba, bb = boundary(a), boundary(b)
    d = np.concatenate([_directed(ba, bb), _directed(bb, ba)])
    return float(np.percentile(d, 95))


def confidence_and_correct(logits, labels):
    """Per-pixel max probability and whether the argmax matches the label."""
    probs = softmax(logits)
    pred = probs.argmax(axis=1)
    return probs.max(axis=1), pred == np.asarray(labels), probs


def _bin_index(conf, bins):
    idx = np.ceil(np.asarray(conf) * bins).astype(int) - 1
    return np.clip(idx, 0, bins - 1)


@dataclass
class ReliabilityTable:
    lower: np.ndarray
    upper: np.ndarray
    count: np.ndarray
    accuracy: np.ndarray  # NaN for empty bins
    confidence: np.ndarray


def reliability(confidences, correctness, bins: int = 10) -> ReliabilityTable:
    conf = np.asarray(confidences, dtype=float).ravel()
    corr = np.asarray(correctness, dtype=float).ravel()
    idx = _bin_index(conf, bins)
    count = np.bincount(idx, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.bincount(idx, weights=corr, minlength=bins) / count
        mean_conf = np.bincount(idx, weights=conf, minlength=bins) / count
    edges = np.linspace(0, 1, bins + 1)
    return ReliabilityTable(edges[:-1], edges[1:], count, acc, mean_conf)


def ece(confidences, correctness, bins: int = 10) -> float:
    conf = np.asarray(confidences, dtype=float).ravel()
    if conf.size == 0:
        raise ValueError("ECE of an empty set")
    if np.any(conf < 0) or np.any(conf > 1):
        raise ValueError("confidences must lie in [0, 1]")
    t = reliability(conf, correctness, bins)
    seen = t.count > 0
    return float(np.sum(t.count[seen] / conf.size * np.abs(t.accuracy[seen] - t.confidence[seen])))


def tace(probs, labels, threshold: float = 1e-3, ranges: int = 15) -> float:
    """Thresholded adaptive calibration error.

    ``probs`` is ``(M, K)`` per-class confidences, ``labels`` ``(M,)``.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels).ravel()
    total, cells = 0.0, 0
    for k in range(probs.shape[1]):
        conf = probs[:, k]
        keep = conf >= threshold
        if not keep.any():
            continue
        conf_k = conf[keep]
        hit = (labels[keep] == k).astype(float)
        order = np.argsort(conf_k, kind="stable")
        for chunk in np.array_split(order, ranges):
            if chunk.size == 0:
                continue
            total += abs(hit[chunk].mean() - conf_k[chunk].mean())
            cells += 1
    if cells == 0:
        raise ValueError("every confidence is below the threshold")
    return total / cells


def flatten_probs(probs):
    """(N,K,H,W) -> (N*H*W, K)."""
    probs = np.asarray(probs)
    return np.moveaxis(probs, 1, -1).reshape(-1, probs.shape[1])


# ---------------------------------------------------------------------------


@dataclass
class RankTable:
    methods: list[str]
    settings: list[str]
    values: np.ndarray  # (methods, settings)
    higher_better: list[bool]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.methods), len(self.settings)):
            raise ValueError("ragged rank table")
        if len(self.higher_better) != len(self.settings):
            raise ValueError("need one orientation per setting")


@dataclass
class FriedmanResult:
    methods: list[str]
    per_setting: np.ndarray
    rank_f: np.ndarray
    final: np.ndarray  # 1 = best; ties share the lower position

    def ordering(self) -> list[str]:
        return [self.methods[i] for i in np.argsort(self.rank_f, kind="stable")]


def friedman_rank(table: RankTable, ties: str = "average") -> FriedmanResult:
    """Mean per-setting rank; ``ties`` is passed to ``scipy.stats.rankdata``."""
    cols = []
    for j, hb in enumerate(table.higher_better):
        v = table.values[:, j]
        cols.append(rankdata(-v if hb else v, method=ties))
    per = np.stack(cols, axis=1)
    rank_f = per.mean(axis=1)
    final = rankdata(rank_f, method="min").astype(int)
    return FriedmanResult(list(table.methods), per, rank_f, final)


def orientation(setting: str) -> bool:
    """Higher-is-better for DSC-like columns, lower for distances and errors."""
    return setting.lower().split("_")[-1] in ("dsc", "dice", "acc", "accuracy")


# ---------------------------------------------------------------------------


def logit_histogram(logits, labels, bins: int = HIST_BINS, value_range=HIST_RANGE):
    """Counts of winner, runner-up and true-class logits.

    Values outside ``value_range`` are clipped into the edge bins so every
    role's histogram holds exactly one entry per pixel.
    """
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    srt = np.sort(logits, axis=1)
    true = np.take_along_axis(logits, labels[:, None], axis=1)[:, 0]
    roles = {"winner": srt[:, -1], "runner_up": srt[:, -2], "true_class": true}
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    out = {}
    for name, vals in roles.items():
        idx = np.clip(np.searchsorted(edges, vals.ravel(), side="right") - 1, 0, bins - 1)
        out[name] = np.bincount(idx, minlength=bins)
    return edges, out


# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    dsc: np.ndarray  # per class, mean over images
    hd95: np.ndarray
    ece: float
    tace: float
    reliability: ReliabilityTable
    histogram_edges: np.ndarray
    histograms: dict[str, np.ndarray] = field(default_factory=dict)
    scored_pixels: int = 0

    @property
    def mean_dsc(self) -> float:
        return float(np.mean(self.dsc[1:]))

    @property
    def mean_hd95(self) -> float:
        return float(np.mean(self.hd95[1:]))

    def summary(self) -> dict[str, float]:
        return {"dsc": self.mean_dsc, "hd95": self.mean_hd95, "ece": self.ece, "tace": self.tace}


def evaluate_logits(logits, labels, bins: int = 10, threshold: float = 1e-3, ranges: int = 15) -> MetricsReport:
    """Full report for ``(N,K,H,W)`` logits against ``(N,H,W)`` labels.

    DSC and HD95 are computed per image and class, then averaged over images;
    summaries average the foreground classes.
    """
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    n, k = logits.shape[:2]
    if labels.shape != (n,) + logits.shape[2:]:
        raise ValueError(f"labels {labels.shape} do not match logits {logits.shape}")
    conf, correct, probs = confidence_and_correct(logits, labels)
    pred = probs.argmax(axis=1)
    dsc = np.array([[dice(pred[i], labels[i], c) for c in range(k)] for i in range(n)]).mean(axis=0)
    hd = np.array([[hd95(pred[i], labels[i], c) for c in range(k)] for i in range(n)]).mean(axis=0)
    fg = labels > 0
    if not fg.any():
        raise ValueError("no foreground pixels to score")
    e = ece(conf[fg], correct[fg], bins)
    t = tace(flatten_probs(probs), labels.ravel(), threshold, ranges)
    edges, hist = logit_histogram(logits, labels)
    return MetricsReport(dsc, hd, e, t, reliability(conf[fg], correct[fg], bins), edges, hist, int(fg.sum()))


METRIC_COLUMNS = ("dsc", "hd95", "ece", "tace")
SCHEMA = "metrics-v1"


def write_metrics_csv(path, method: str, split: str, report: MetricsReport) -> None:
    s = report.summary()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["schema", "method", "split", *METRIC_COLUMNS])
        w.writerow([SCHEMA, method, split, *(repr(float(s[c])) for c in METRIC_COLUMNS)])


def write_per_class_csv(path, report: MetricsReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "dsc", "hd95"])
        for c, (d, h) in enumerate(zip(report.dsc, report.hd95)):
            w.writerow([c, repr(float(d)), repr(float(h))])


def write_reliability_csv(path, table: ReliabilityTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lower", "upper", "count", "accuracy", "confidence"])
        for row in zip(table.lower, table.upper, table.count, table.accuracy, table.confidence):
            w.writerow([repr(float(v)) if i != 2 else int(v) for i, v in enumerate(row)])


def write_histogram_csv(path, edges, histograms: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lower", "upper", *HIST_ROLES])
        for i in range(len(edges) - 1):
            w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), *(int(histograms[r][i]) for r in HIST_ROLES)])


def read_rank_csv(paths) -> RankTable:
    """Stack method rows from one or more CSVs into a rank table.

    Every column other than ``schema``, ``method`` and ``split`` is a setting;
    all files must share the same setting columns.
    """
    methods, rows, settings = [], [], None
    for p in paths:
        with open(p, newline="") as fh:
            reader = csv.DictReader(fh)
            cols = [c for c in reader.fieldnames or [] if c not in ("schema", "method", "split")]
            if settings is None:
                settings = cols
            elif cols != settings:
                raise ValueError(f"{Path(p).name}: columns {cols} differ from {settings}")
            for row in reader:
                methods.append(row.get("method") or Path(p).stem)
                rows.append([float(row[c]) for c in cols])
    if not methods:
        raise ValueError("no rows to rank")
    return RankTable(methods, settings, np.array(rows), [orientation(s) for s in settings])
