"""Penalty-Lagrangian functions and executable checks of their axioms.

A penalty ``P(z, rho, lam)`` acts on a constraint value ``z`` (``z <= 0``
means satisfied). The ALM multiplier update sets ``lam <- P'(z, rho, lam)``,
so the derivative carries most of the behaviour and is what the axioms
constrain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import phr_derivative, phr_value


@dataclass(frozen=True)
class PenaltyEval:
    value: float
    derivative: float


@dataclass(frozen=True)
class Penalty:
    """A penalty with vectorised value and derivative in ``z``."""

    name: str
    value: Callable
    derivative: Callable

    def __call__(self, z, rho, lam) -> PenaltyEval:
        return PenaltyEval(float(self.value(z, rho, lam)), float(self.derivative(z, rho, lam)))


def _validate(rho, lam):
    if np.any(np.asarray(rho) <= 0) or np.any(np.asarray(lam) <= 0):
        raise ValueError("penalty needs rho > 0 and lam > 0")


def phr(z, rho, lam) -> PenaltyEval:
    """Powell-Hestenes-Rockafellar penalty at a scalar point."""
    _validate(rho, lam)
    if not np.isfinite(z):
        raise ValueError("z must be finite")
    return PHR(z, rho, lam)


PHR = Penalty("phr", phr_value, phr_derivative)

# Constant derivative: fine for Axioms 1-2, violates the growth/decay axioms.
LINEAR = Penalty(
    "linear",
    lambda z, rho, lam: lam * np.asarray(z, dtype=float),
    lambda z, rho, lam: lam * np.ones_like(np.asarray(z, dtype=float)),
)


def _quad_exp_value(z, rho, lam):
    # PHR-like quadratic for rho*z/lam >= -1/2, exponential tail below;
    # value and derivative match at the junction
    z = np.asarray(z, dtype=float)
    t = rho * z / lam
    quad = lam * z + 0.5 * rho * z * z
    c = lam * lam / rho
    tail = 0.25 * c * np.exp(1 + 2 * np.minimum(t, -0.5)) - 0.625 * c
    return np.where(t >= -0.5, quad, tail)


def _quad_exp_derivative(z, rho, lam):
    z = np.asarray(z, dtype=float)
    t = rho * z / lam
    return np.where(t >= -0.5, lam + rho * z, 0.5 * lam * np.exp(1 + 2 * np.minimum(t, -0.5)))


# Smooth alternative that satisfies all four axioms; registered so the axiom
# checker is exercised on more than one compliant function.
QUAD_EXP = Penalty("quad_exp", _quad_exp_value, _quad_exp_derivative)

REGISTRY: dict[str, Penalty] = {p.name: p for p in (PHR, QUAD_EXP)}


def register(penalty: Penalty) -> None:
    REGISTRY[penalty.name] = penalty


@dataclass
class AxiomReport:
    penalty: str
    passed: dict[int, bool]
    details: dict[int, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def failures(self) -> list[int]:
        return [k for k, v in self.passed.items() if not v]


def geometric_rho(start_exp: int = 0, stop_exp: int = 12):
    return 10.0 ** np.arange(start_exp, stop_exp + 1)


def check_axioms(
    penalty: Penalty,
    sample_count: int = 10_000,
    rho_sequence=None,
    lam_bounds: tuple[float, float] = (1e-3, 1e3),
    seed: int = 0,
) -> AxiomReport:
    """Check the four penalty axioms on random samples.

    Axioms 3 and 4 are limit statements; they are checked along the geometric
    ``rho_sequence``: for ``z > 0`` the derivative must increase monotonically
    and end above every bound seen in the sample, for ``z < 0`` it must fall
    below 1e-9 by the end.
    """
    if sample_count < 1000:
        raise ValueError("sample_count must be >= 1000")
    rho_seq = geometric_rho() if rho_sequence is None else np.asarray(rho_sequence, float)
    rng = np.random.default_rng(seed)
    lo, hi = lam_bounds
    z = rng.uniform(-10, 10, sample_count)
    rho = 10.0 ** rng.uniform(-3, 3, sample_count)
    lam = 10.0 ** rng.uniform(np.log10(lo), np.log10(hi), sample_count)
    passed, details = {}, {}

    with np.errstate(all="ignore"):
        d = penalty.derivative(z, rho, lam)
        passed[1] = bool(np.all(d >= 0))
        details[1] = f"min P' = {np.min(d):.3g}"

        d0 = penalty.derivative(np.zeros_like(lam), rho, lam)
        err = np.max(np.abs(d0 - lam) / lam)
        passed[2] = bool(err <= 1e-12)
        details[2] = f"max |P'(0)-lam|/lam = {err:.3g}"

        # along the rho sequence: rows = rho values, cols = samples
        zpos = rng.uniform(1e-3, 10, sample_count // 10)
        zneg = -zpos
        lam_s = 10.0 ** rng.uniform(np.log10(lo), np.log10(hi), zpos.size)
        R = rho_seq[:, None]
        up = penalty.derivative(zpos[None, :], R, lam_s[None, :])
        bound = max(float(np.max(d)), hi)
        monotone = bool(np.all(np.diff(up, axis=0) > 0))
        crosses = bool(np.all(up[-1] > bound))
        passed[3] = monotone and crosses
        details[3] = f"monotone={monotone}, final min P'={np.min(up[-1]):.3g} vs bound {bound:.3g}"

        down = penalty.derivative(zneg[None, :], R, lam_s[None, :])
        final = float(np.max(down[-1]))
        passed[4] = bool(final < 1e-9)
        details[4] = f"final max P' = {final:.3g}"
    return AxiomReport(penalty.name, passed, details)
