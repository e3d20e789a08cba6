"""Self-checks shared by the ``check`` command and the test-suite.

Three families: penalty axioms, finite-difference gradient checks of every
training loss on small random instances, and ALM solves of toy problems with
known KKT points.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import losses
from .autodiff import Graph, grad_check
from .penalty import LINEAR, PHR, QUAD_EXP, Penalty, check_axioms
from .priors import classify_regions, compute_prior
from .scheduler import SchedulerState, kkt_toy, solve_toy


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def random_instance(rng, n=1, k=3, h=4, w=4):
    """Logits, labels, prior and regions for a small segmentation batch."""
    labels = rng.integers(0, k, (n, h, w))
    # blocky labels so both regions occur
    labels[:, : h // 2, : w // 2] = rng.integers(0, k)
    logits = rng.uniform(-3, 3, (n, k, h, w))
    prior = compute_prior(labels, k)
    return logits, labels, prior, classify_regions(labels)


def loss_graph(kind: str, rng, instance=None):
    """Build ``kind`` on a fresh float64 graph; returns ``(graph, loss)``."""
    logits_v, labels, prior, regions = instance or random_instance(rng)
    k = logits_v.shape[1]
    g = Graph(np.float64)
    logits = g.param(logits_v, "logits")
    if kind == "ce":
        loss = losses.cross_entropy(g, logits, labels)
    elif kind == "fl":
        loss = losses.focal_loss(g, logits, labels, rng.uniform(0.5, 4))
    elif kind == "ls":
        loss = losses.label_smoothing_ce(g, logits, labels, rng.uniform(0, 0.3))
    elif kind == "ecp":
        loss = losses.entropy_penalty_loss(g, logits, labels, rng.uniform(0, 1))
    elif kind == "mbls":
        # small margin so the hinge is active on some pixels
        loss = losses.margin_logit_loss(g, logits, labels, rng.uniform(0.05, 1), rng.uniform(0, 3))
    elif kind == "nacl":
        loss = losses.nacl_loss(g, logits, labels, prior, rng.uniform(0, 1), regions).total
    elif kind == "crac-fixed":
        loss = losses.crac_fixed_loss(g, logits, labels, prior, regions, rng.uniform(0, 1, (k, 2))).total
    elif kind == "crac":
        state = SchedulerState.initial((k, 2))
        state = type(state)(rng.uniform(0.01, 2, (k, 2)), rng.uniform(0.1, 5, (k, 2)), state.prev_violation)
        loss = losses.crac_alm_loss(g, logits, labels, prior, regions, state).total
    else:
        raise ValueError(f"unknown loss {kind!r}")
    return g, loss


def loss_gradient_check(kind: str, trials: int = 100, tolerance: float = 1e-3, min_checked: int | None = None):
    """Central-difference check of ``kind`` on ``trials`` random instances."""
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    checked, worst = 0, 0.0
    failures = []
    for t in range(trials):
        g, loss = loss_graph(kind, rng)
        report = grad_check(g, loss, step=1e-5, tolerance=tolerance)
        if report.excluded_point:
            continue
        checked += 1
        worst = max(worst, report.worst)
        if not report.passed:
            failures.append(t)
    need = int(0.95 * trials) if min_checked is None else min_checked
    ok = not failures and checked >= need
    detail = f"{checked}/{trials} instances checked, worst rel. error {worst:.2e}"
    if failures:
        detail += f", failing trials {failures[:5]}"
    return CheckResult(f"grad {kind}", ok, detail)


def axiom_check(penalty: Penalty, expect_ok: bool = True, sample_count: int = 10_000) -> CheckResult:
    rep = check_axioms(penalty, sample_count)
    fails = rep.failures()
    detail = "all axioms hold" if not fails else "violates axiom(s) " + ", ".join(map(str, fails))
    return CheckResult(f"axioms {penalty.name}", rep.ok == expect_ok, detail)


def toy_checks() -> list[CheckResult]:
    out = []
    active = solve_toy(kkt_toy(1.0, 2.0), [0.0])
    x, lam = float(active.x[0]), float(active.lam[0])
    out.append(
        CheckResult(
            "toy active constraint",
            abs(x - 1) <= 1e-3 and abs(lam - 2) <= 0.1,
            f"x = {x:.6f} (want 1), lambda = {lam:.4f} (want 2)",
        )
    )
    inactive = solve_toy(kkt_toy(3.0, 2.0), [0.0])
    x, lam = float(inactive.x[0]), float(inactive.lam[0])
    lam_min = inactive.state.lam_min
    out.append(
        CheckResult(
            "toy inactive constraint",
            abs(x - 2) <= 1e-3 and lam == lam_min,
            f"x = {x:.6f} (want 2), lambda = {lam:.3g} (want {lam_min:.3g})",
        )
    )
    return out


def run_all(trials: int = 100, inject_noncompliant: bool = False) -> list[CheckResult]:
    results = [axiom_check(PHR), axiom_check(QUAD_EXP), axiom_check(LINEAR, expect_ok=False)]
    if inject_noncompliant:
        # treat the linear penalty as if it were meant to be compliant
        results.append(axiom_check(LINEAR, expect_ok=True))
    results += [loss_gradient_check(kind, trials) for kind in losses.LOSS_KINDS]
    results += toy_checks()
    return results
