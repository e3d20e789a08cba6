"""Training loop: data, model, losses, outer ALM updates, Adam, checkpoints.

One epoch is one inner iteration. For the ``crac`` loss the validation split
is scored after the last gradient step of every epoch, then multipliers and
penalty parameters are updated (in that order) before the next epoch starts.

Everything trains in float32 so that checkpoints (float32 on disk) capture
the full state and a resumed run continues bit-identically.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, losses, model
from .autodiff import Graph, backward
from .datagen import Dataset, read_dataset
from .metrics import MetricsReport, evaluate_logits
from .priors import classify_regions, compute_prior
from .scheduler import VIOLATION_MEASURES, SchedulerState, accumulate_validation, batch_statistics, outer_step

log = logging.getLogger(__name__)

DTYPE = np.float32


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class CompatibilityError(ValueError):
    pass


@dataclass
class TrainConfig:
    dataset: str = ""
    out_dir: str = ""
    loss: str = "ce"
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-3
    lr_after: float = 1e-4
    lr_decay_epoch: int = -1  # -1: half of epochs
    seed: int = 0
    fl_gamma: float = 3.0
    ls_alpha: float = 0.1
    ecp_lambda: float = 0.1
    mbls_lambda: float = 0.1
    mbls_margin: float = 10.0
    nacl_lambda: float = 0.1
    lambda_inner: str = "0.1"  # crac-fixed: scalar or K comma-separated values
    lambda_outer: str = "0.1"
    lambda_init: float = 0.1
    rho_init: float = 1.0
    rho_growth: float = 1.2
    mu: float = 0.9
    lambda_min: float = 1e-6
    lambda_max: float = 1e6
    convention: str = "signed"
    rho_violation: str = "absolute"  # violation measure for the rho test
    prior_normalize: bool = False
    patch_size: int = 3
    keep_checkpoints: bool = True

    def validate(self) -> "TrainConfig":
        if self.loss not in losses.LOSS_KINDS:
            raise ConfigError(f"loss must be one of {', '.join(losses.LOSS_KINDS)}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or self.lr_after <= 0:
            raise ConfigError("learning rates must be positive")
        if self.convention not in losses.CONVENTIONS:
            raise ConfigError(f"convention must be one of {losses.CONVENTIONS}")
        if self.rho_violation not in VIOLATION_MEASURES:
            raise ConfigError(f"rho_violation must be one of {VIOLATION_MEASURES}")
        if not self.dataset or not self.out_dir:
            raise ConfigError("dataset and out_dir are required")
        return self

    @property
    def decay_epoch(self) -> int:
        return self.epochs // 2 if self.lr_decay_epoch < 0 else self.lr_decay_epoch

    def lr_at(self, epoch: int) -> float:
        return self.lr if epoch < self.decay_epoch else self.lr_after

    def fixed_weights(self, k: int) -> np.ndarray:
        cols = []
        for raw in (self.lambda_inner, self.lambda_outer):
            vals = [float(v) for v in str(raw).split(",")]
            if len(vals) == 1:
                vals = vals * k
            if len(vals) != k:
                raise ConfigError(f"expected 1 or {k} weights, got {raw!r}")
            cols.append(vals)
        return np.array(cols, dtype=float).T

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


def _coerce(name, raw, typ):
    try:
        if typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str, **overrides) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, unknown keys are errors."""
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, fields[key])
    for key, v in overrides.items():
        if key not in fields:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = v
    return TrainConfig(**values).validate()


def load_config(path, **overrides) -> TrainConfig:
    return parse_config(Path(path).read_text(), **overrides)


# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, moments: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns new params and moments."""
    t = moments.step + 1
    c1 = 1 - beta1**t
    c2 = 1 - beta2**t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name}")
        m = beta1 * moments.m[name] + (1 - beta1) * g
        v = beta2 * moments.v[name] + (1 - beta2) * g * g
        upd = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_p[name] = (p - upd).astype(p.dtype)
        new_m[name] = m.astype(p.dtype)
        new_v[name] = v.astype(p.dtype)
    return new_p, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------


@dataclass
class PreparedSplit:
    images: np.ndarray
    labels: np.ndarray
    prior: np.ndarray
    regions: np.ndarray


def prepare(ds: Dataset, split: str, cfg: TrainConfig) -> PreparedSplit:
    images, labels = ds.arrays(split)
    prior = compute_prior(labels, ds.num_classes, cfg.patch_size, cfg.prior_normalize).astype(DTYPE)
    return PreparedSplit(images.astype(DTYPE), labels.astype(np.int64), prior, classify_regions(labels, cfg.patch_size))


def compute_loss(cfg: TrainConfig, graph: Graph, logits, labels, prior, regions, state):
    """Dispatch on ``cfg.loss``; returns the scalar tensor and logged terms."""
    kind = cfg.loss
    if kind in ("nacl", "crac-fixed", "crac"):
        if kind == "nacl":
            bd = losses.nacl_loss(graph, logits, labels, prior, cfg.nacl_lambda, regions)
        elif kind == "crac-fixed":
            bd = losses.crac_fixed_loss(graph, logits, labels, prior, regions, cfg.fixed_weights(logits.shape[1]))
        else:
            bd = losses.crac_alm_loss(graph, logits, labels, prior, regions, state, cfg.convention)
        return bd.total, {"ce": bd.ce_term, "pen_inner": bd.penalty_term_inner, "pen_outer": bd.penalty_term_outer}
    if kind == "ce":
        total = losses.cross_entropy(graph, logits, labels)
    elif kind == "fl":
        total = losses.focal_loss(graph, logits, labels, cfg.fl_gamma)
    elif kind == "ls":
        total = losses.label_smoothing_ce(graph, logits, labels, cfg.ls_alpha)
    elif kind == "ecp":
        total = losses.entropy_penalty_loss(graph, logits, labels, cfg.ecp_lambda)
    else:
        total = losses.margin_logit_loss(graph, logits, labels, cfg.mbls_lambda, cfg.mbls_margin)
    return total, {}


def _ce_numpy(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-np.take_along_axis(logp, labels[:, None], axis=1).mean())


def validation_pass(params, val: PreparedSplit, state, cfg: TrainConfig):
    """Validation CE and, for the ALM loss, the merged constraint statistics."""
    logits = model.predict_logits(params, val.images, cfg.batch_size)
    stats = []
    for s in range(0, len(val.images), cfg.batch_size):
        sl = slice(s, s + cfg.batch_size)
        stats.append(
            batch_statistics(logits[sl], val.prior[sl], val.regions[sl], state, cfg.convention, measure=cfg.rho_violation)
        )
    return _ce_numpy(logits, val.labels), accumulate_validation(state, stats)


# ---------------------------------------------------------------------------


def to_checkpoint(params, moments: AdamState, state: SchedulerState | None, epoch: int, k: int):
    out = dict(params)
    for name in params:
        out[f"adam.m.{name}"] = moments.m[name]
        out[f"adam.v.{name}"] = moments.v[name]
    out["adam.step"] = np.array(moments.step)
    if state is not None:
        out.update(state.to_tensors())
    out["meta.epoch"] = np.array(epoch)
    out["meta.num_classes"] = np.array(k)
    return out


def from_checkpoint(tensors):
    params = {k: v for k, v in tensors.items() if not k.startswith(("adam.", "sched.", "meta."))}
    moments = AdamState(
        {k: tensors[f"adam.m.{k}"] for k in params},
        {k: tensors[f"adam.v.{k}"] for k in params},
        int(tensors["adam.step"]),
    ) if "adam.step" in tensors else AdamState.zeros_like(params)
    state = SchedulerState.from_tensors(tensors) if "sched.lambda" in tensors else None
    return params, moments, state, int(tensors["meta.epoch"]), int(tensors["meta.num_classes"])


def log_columns(cfg: TrainConfig, k: int) -> list[str]:
    cols = ["epoch", "lr", "train_loss", "train_ce", "train_pen_inner", "train_pen_outer", "val_ce"]
    if cfg.loss == "crac":
        for name in ("lambda", "rho", "violation"):
            cols += [f"{name}_k{c}_{r}" for c in range(k) for r in ("inner", "outer")]
    return cols


@dataclass
class TrainResult:
    checkpoint: Path
    log_rows: list[dict] = field(default_factory=list)
    state: SchedulerState | None = None


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_log(path, cols, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in cols])


def _read_log(path, upto):
    if not Path(path).exists():
        return []
    with open(path, newline="") as fh:
        return [r for r in csv.DictReader(fh) if int(r["epoch"]) <= upto]


def train(cfg: TrainConfig, resume=None, dataset: Dataset | None = None) -> TrainResult:
    """Train per ``cfg``; ``resume`` is a checkpoint written by an earlier run."""
    cfg.validate()
    ds = dataset if dataset is not None else read_dataset(cfg.dataset)
    k = ds.num_classes
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.to_text())
    tr = prepare(ds, "train", cfg)
    val = prepare(ds, "val", cfg)
    if len(tr.images) == 0:
        raise TrainingError("empty training split")

    if resume is not None:
        params, moments, state, start, k_ckpt = from_checkpoint(checkpoint.load(resume))
        if k_ckpt != k:
            raise CompatibilityError(f"checkpoint has {k_ckpt} classes, dataset {k}")
        rows = _read_log(out / "log.csv", start)
    else:
        params = model.build(cfg.seed, k, tr.images.shape[1], DTYPE)
        moments = AdamState.zeros_like(params)
        state = None
        start, rows = 0, []
    if cfg.loss == "crac" and state is None:
        state = SchedulerState.initial(
            (k, 2), cfg.lambda_init, cfg.rho_init, cfg.rho_growth, cfg.mu, cfg.lambda_min, cfg.lambda_max
        ).quantized()
    cols = log_columns(cfg, k)
    timing = []
    ckpt_path = out / "last.crck"

    for epoch in range(start, cfg.epochs):
        t0 = time.perf_counter()
        lr = cfg.lr_at(epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(tr.images))
        sums = {"loss": 0.0, "ce": 0.0, "pen_inner": 0.0, "pen_outer": 0.0}
        for b, s in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[s : s + cfg.batch_size]
            g = Graph(DTYPE)
            p = model.bind(g, params)
            logits = model.forward(g, p, tr.images[idx])
            try:
                total, terms = compute_loss(cfg, g, logits, tr.labels[idx], tr.prior[idx], tr.regions[idx], state)
            except ArithmeticError as exc:
                _dump_failure(out, epoch, b, idx, exc)
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}: {exc}") from exc
            loss_value = total.item()
            if not np.isfinite(loss_value):
                _dump_failure(out, epoch, b, idx, "non-finite loss")
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = backward(g, total)
            params, moments = adam_step(params, grads, moments, lr)
            sums["loss"] += loss_value * len(idx)
            for key, val_ in terms.items():
                sums[key] += val_ * len(idx)
            if not terms:
                sums["ce"] += loss_value * len(idx)

        val_ce, acc = validation_pass(params, val, state if state is not None else _dummy_state(k), cfg)
        row = {
            "epoch": epoch + 1,
            "lr": lr,
            "train_loss": sums["loss"] / len(order),
            "train_ce": sums["ce"] / len(order),
            "train_pen_inner": sums["pen_inner"] / len(order),
            "train_pen_outer": sums["pen_outer"] / len(order),
            "val_ce": val_ce,
        }
        if cfg.loss == "crac":
            state = outer_step(state, acc).quantized()
            _log_matrix(row, "lambda", state.lam)
            _log_matrix(row, "rho", state.rho)
            _log_matrix(row, "violation", acc.mean_violation)
        rows.append(row)
        tensors = to_checkpoint(params, moments, state, epoch + 1, k)
        checkpoint.save(tensors, ckpt_path)
        if cfg.keep_checkpoints:
            checkpoint.save(tensors, out / f"epoch_{epoch + 1:03d}.crck")
        _write_log(out / "log.csv", cols, rows)
        timing.append((epoch + 1, time.perf_counter() - t0))
        log.info("epoch %d/%d loss %.4f val_ce %.4f", epoch + 1, cfg.epochs, row["train_loss"], val_ce)

    # wall time is kept out of log.csv so logs are reproducible byte for byte
    with open(out / "timing.csv", "a", newline="") as fh:
        w = csv.writer(fh)
        for e, sec in timing:
            w.writerow([e, f"{sec:.3f}"])
    return TrainResult(ckpt_path, rows, state)


def _dummy_state(k):
    return SchedulerState.initial((k, 2))


def _log_matrix(row, name, mat):
    for c in range(mat.shape[0]):
        for r, region in enumerate(("inner", "outer")):
            row[f"{name}_k{c}_{region}"] = float(mat[c, r])


def _dump_failure(out, epoch, batch, idx, reason):
    (out / "failure.txt").write_text(
        f"epoch = {epoch}\nbatch = {batch}\nsamples = {','.join(map(str, idx))}\nreason = {reason}\n"
    )


# ---------------------------------------------------------------------------


def evaluate(ckpt, ds: Dataset, split: str = "test", batch_size: int = 16, **metric_kw) -> MetricsReport:
    """Metrics for a checkpoint (path or tensor dict) on one dataset split."""
    tensors = checkpoint.load(ckpt) if not isinstance(ckpt, dict) else ckpt
    params, _, _, _, k = from_checkpoint(tensors)
    if k != ds.num_classes:
        raise CompatibilityError(f"checkpoint has {k} classes, dataset has {ds.num_classes}")
    if split not in ds.splits:
        raise ValueError(f"unknown split {split!r}")
    images, labels = ds.arrays(split)
    expected = dict(model.layer_table(k, images.shape[1]))
    for name, shape in expected.items():
        if params.get(f"{name}.weight", np.empty(0)).shape != shape:
            raise CompatibilityError(f"checkpoint parameter {name}.weight does not match the architecture")
    logits = model.predict_logits(params, images.astype(DTYPE), batch_size)
    return evaluate_logits(logits.astype(np.float64), labels.astype(np.int64), **metric_kw)
