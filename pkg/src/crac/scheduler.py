"""Outer-iteration machinery of the augmented Lagrangian scheme.

After each training epoch the validation split is scored, the per-(class,
region) multipliers are replaced by the pixel-averaged penalty derivative,
and each penalty parameter grows by ``gamma`` unless its mean violation fell
below ``mu`` times the previous epoch's.

The printed growth condition compares a violation with ``mu`` times the same
violation; it is read here as the usual sufficient-decrease test against the
previous outer iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .penalty import PHR, Penalty


@dataclass(frozen=True)
class SchedulerState:
    lam: np.ndarray
    rho: np.ndarray
    prev_violation: np.ndarray  # NaN where no previous epoch has been seen
    gamma: float = 1.2
    mu: float = 0.9
    lam_min: float = 1e-6
    lam_max: float = 1e6
    epoch: int = 0

    @classmethod
    def initial(
        cls,
        shape=(4, 2),
        lam0: float = 0.1,
        rho0: float = 1.0,
        gamma: float = 1.2,
        mu: float = 0.9,
        lam_min: float = 1e-6,
        lam_max: float = 1e6,
    ) -> "SchedulerState":
        if gamma < 1:
            raise ValueError("gamma must be >= 1")
        if not 0 < mu <= 1:
            raise ValueError("mu must be in (0, 1]")
        if not 0 < lam_min <= lam_max:
            raise ValueError("need 0 < lam_min <= lam_max")
        if rho0 <= 0:
            raise ValueError("rho0 must be positive")
        lam = np.clip(np.full(shape, float(lam0)), lam_min, lam_max)
        return cls(lam, np.full(shape, float(rho0)), np.full(shape, np.nan), gamma, mu, lam_min, lam_max)

    def to_tensors(self, prefix: str = "sched.") -> dict[str, np.ndarray]:
        hyper = [self.gamma, self.mu, self.lam_min, self.lam_max, self.epoch]
        return {
            prefix + "lambda": self.lam,
            prefix + "rho": self.rho,
            prefix + "prev_violation": self.prev_violation,
            prefix + "hyper": np.array(hyper, dtype=float),
        }

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], prefix: str = "sched.") -> "SchedulerState":
        gamma, mu, lo, hi, epoch = (float(v) for v in tensors[prefix + "hyper"])
        return cls(
            np.asarray(tensors[prefix + "lambda"], dtype=float),
            np.asarray(tensors[prefix + "rho"], dtype=float),
            np.asarray(tensors[prefix + "prev_violation"], dtype=float),
            gamma,
            mu,
            lo,
            hi,
            int(epoch),
        )

    def quantized(self) -> "SchedulerState":
        """Round arrays to float32 so a checkpoint round trip is exact."""

        def q(a):
            return np.asarray(a, dtype=np.float32).astype(float)

        return replace(
            self,
            lam=q(self.lam),
            rho=q(self.rho),
            prev_violation=q(self.prev_violation),
            gamma=float(np.float32(self.gamma)),
            mu=float(np.float32(self.mu)),
            lam_min=float(np.float32(self.lam_min)),
            lam_max=float(np.float32(self.lam_max)),
        )


@dataclass(frozen=True)
class BatchStats:
    """Per-cell means over one batch and the pixel counts behind them."""

    mean_derivative: np.ndarray
    mean_violation: np.ndarray
    count: np.ndarray


@dataclass(frozen=True)
class Accumulated:
    mean_derivative: np.ndarray  # NaN where count == 0
    mean_violation: np.ndarray
    count: np.ndarray


VIOLATION_MEASURES = ("positive", "absolute")


def violation_measure(z, diff, measure: str = "absolute"):
    """Per-pixel violation fed to the penalty-parameter test.

    ``positive`` is ``max(0, z)`` for the penalty argument ``z``, so satisfied
    pixels count as zero; ``absolute`` is ``|tau - l|`` whatever the sign.
    The two agree under the absolute convention.
    """
    if measure == "positive":
        return np.maximum(z, 0.0)
    if measure == "absolute":
        return np.abs(diff)
    raise ValueError(f"violation measure must be one of {VIOLATION_MEASURES}")


def batch_statistics(
    logits,
    prior,
    regions,
    state: SchedulerState,
    convention: str = "signed",
    penalty: Penalty = PHR,
    measure: str = "absolute",
) -> BatchStats:
    """Penalty-derivative and violation means per (class, region) for one batch."""
    diff = np.asarray(prior, dtype=float) - np.asarray(logits, dtype=float)
    z = diff if convention == "signed" else np.abs(diff)
    viol = violation_measure(z, diff, measure)
    regions = np.asarray(regions)
    k = diff.shape[1]
    mean_d = np.zeros((k, 2))
    mean_a = np.zeros((k, 2))
    count = np.zeros((k, 2), dtype=np.int64)
    for r in (0, 1):
        mask = regions == r
        n = int(mask.sum())
        count[:, r] = n
        if not n:
            continue
        for c in range(k):
            zc = z[:, c][mask]
            lam = state.lam[c, r]
            # offset from lam keeps P' = lam exact when every z is 0
            mean_d[c, r] = lam + (penalty.derivative(zc, state.rho[c, r], lam) - lam).mean()
            mean_a[c, r] = viol[:, c][mask].mean()
    return BatchStats(mean_d, mean_a, count)


def accumulate_validation(state: SchedulerState, stream: Iterable[BatchStats]) -> Accumulated:
    """Pixel-count-weighted merge of batch statistics (order-insensitive).

    Derivative means are merged as offsets from the current multipliers.
    """
    sum_d = sum_a = None
    total = None
    lam = np.asarray(state.lam, dtype=float)
    for s in stream:
        c = np.asarray(s.count, dtype=float)
        d = (np.asarray(s.mean_derivative, dtype=float) - lam) * c
        a = np.asarray(s.mean_violation, dtype=float) * c
        if total is None:
            sum_d, sum_a, total = d, a, c
        else:
            sum_d, sum_a, total = sum_d + d, sum_a + a, total + c
    if total is None:
        shape = np.shape(state.lam)
        nan = np.full(shape, np.nan)
        return Accumulated(nan, nan.copy(), np.zeros(shape, dtype=np.int64))
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_d = np.where(total > 0, lam + sum_d / np.where(total > 0, total, 1), np.nan)
        mean_a = np.where(total > 0, sum_a / np.where(total > 0, total, 1), np.nan)
    return Accumulated(mean_d, mean_a, total.astype(np.int64))


def update_multipliers(state: SchedulerState, acc: Accumulated) -> SchedulerState:
    """Multipliers become the clamped mean penalty derivative; empty cells carry over."""
    seen = acc.count > 0
    if not np.all(np.isfinite(acc.mean_derivative[seen])):
        raise FloatingPointError("non-finite accumulated penalty derivative")
    lam = np.where(seen, np.clip(np.nan_to_num(acc.mean_derivative), state.lam_min, state.lam_max), state.lam)
    return replace(state, lam=lam, epoch=state.epoch + 1)


def update_rho(state: SchedulerState, acc: Accumulated) -> SchedulerState:
    """Grow rho by gamma where the violation did not drop below mu x previous."""
    seen = acc.count > 0
    current = acc.mean_violation
    has_prev = seen & ~np.isnan(state.prev_violation)
    with np.errstate(invalid="ignore"):
        grow = has_prev & (current > state.mu * state.prev_violation)
    rho = np.where(grow, state.gamma * state.rho, state.rho)
    prev = np.where(seen, current, state.prev_violation)
    return replace(state, rho=rho, prev_violation=prev)


def outer_step(state: SchedulerState, acc: Accumulated) -> SchedulerState:
    """Multipliers first (with the old rho), then the penalty parameters."""
    return update_rho(update_multipliers(state, acc), acc)


# ---------------------------------------------------------------------------
# small-scale problems to validate the machinery


class DivergenceError(ArithmeticError):
    pass


@dataclass
class ToyProblem:
    """minimize g(x) s.t. h_i(x) <= 0, with analytic gradients."""

    objective: Callable
    gradient: Callable
    constraints: Sequence[Callable]
    constraint_gradients: Sequence[Callable]
    name: str = ""


@dataclass
class ToyResult:
    x: np.ndarray
    lam: np.ndarray
    state: SchedulerState
    history: list = field(default_factory=list)

    def max_violation(self, problem: ToyProblem) -> float:
        return max(max(0.0, float(h(self.x))) for h in problem.constraints)


def solve_toy(
    problem: ToyProblem,
    x0,
    state: SchedulerState | None = None,
    inner_steps: int = 500,
    outer_iters: int = 60,
    step: float = 0.05,
    penalty: Penalty = PHR,
) -> ToyResult:
    """ALM with a fixed-step gradient-descent inner solver.

    The violation fed to the penalty-parameter rule is ``max(0, h_i(x))``.
    """
    x = np.array(x0, dtype=float)
    n = len(problem.constraints)
    state = state or SchedulerState.initial(shape=(n,))
    history = []
    for _ in range(outer_iters):
        for _ in range(inner_steps):
            grad = np.array(problem.gradient(x), dtype=float)
            for h, dh, rho, lam in zip(problem.constraints, problem.constraint_gradients, state.rho, state.lam):
                grad = grad + penalty.derivative(h(x), rho, lam) * np.asarray(dh(x), dtype=float)
            x = x - step * grad
            if not np.all(np.isfinite(x)):
                raise DivergenceError(f"{problem.name or 'toy problem'}: iterate became non-finite")
        hx = np.array([h(x) for h in problem.constraints], dtype=float)
        acc = Accumulated(
            penalty.derivative(hx, state.rho, state.lam),
            np.maximum(hx, 0.0),
            np.ones(n, dtype=np.int64),
        )
        state = outer_step(state, acc)
        history.append((x.copy(), state.lam.copy(), state.rho.copy()))
    return ToyResult(x, state.lam.copy(), state, history)


def kkt_toy(bound: float = 1.0, target: float = 2.0) -> ToyProblem:
    """minimize (x - target)^2 s.t. x <= bound."""
    return ToyProblem(
        objective=lambda x: float((x[0] - target) ** 2),
        gradient=lambda x: np.array([2 * (x[0] - target)]),
        constraints=[lambda x: x[0] - bound],
        constraint_gradients=[lambda x: np.array([1.0])],
        name=f"(x-{target})^2 s.t. x<={bound}",
    )
