"""Per-cycle efficiency schedules and the sequences derived from them.

The amplification model is parameterized by efficiencies lambda_k in [0, 1]:
during cycle k every particle duplicates independently with probability
lambda_k. Downstream moment envelopes, estimator corrections and distance
bounds all consume deterministic sequences of the schedule, computed here
exactly and in O(n): the sampling weights alpha_k = lambda_k/(1 + lambda_k),
the inverse growth factors gamma_n, their order-i variants gamma_n^(i), the
cumulative weights W_n and W'_n, the correction sums v, v', v'' and the
remainder coefficient sums u, u', u'' (in both variants).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

ScheduleKind = Literal["deterministic", "michaelis_menten"]


@dataclass(frozen=True)
class EfficiencySchedule:
    """A validated efficiency description.

    Deterministic schedules carry an explicit vector of duplication
    probabilities. Michaelis-Menten schedules compute the efficiency from the
    population size at simulation time (D/(C + S_prev)), so they have no fixed
    vector and are rejected by everything that needs one.
    """

    kind: ScheduleKind
    lambdas: tuple[float, ...] = ()
    mm_C: float = 0.0
    mm_D: float = 0.0

    def prefix(self, n: int) -> np.ndarray:
        """First n efficiencies as an array. Deterministic schedules only."""
        if self.kind != "deterministic":
            raise ValueError("schedule is population-dependent, no fixed efficiency vector")
        if n > len(self.lambdas):
            raise ValueError(f"schedule has {len(self.lambdas)} cycles, {n} requested")
        return np.asarray(self.lambdas[:n], dtype=float)


@dataclass(frozen=True)
class DerivedSequences:
    """All deterministic sequences of a schedule prefix.

    Arrays indexed by cycle count j = 0..n, except ``lam`` and ``alpha`` which
    have length n with entry k-1 for cycle k. The u-family is stored without
    its initial-size prefactor (1/(S0-1), or 1/S0 and 1/(S0+1) for the
    wide-range variant); callers apply the prefactor at query time.
    """

    n: int
    lam: np.ndarray          # lambda_k
    alpha: np.ndarray        # lambda_k / (1 + lambda_k)
    gamma: np.ndarray        # prod_{k<=j} 1/(1 + lambda_k); gamma[0] = 1
    gamma_i: dict[int, np.ndarray]  # i -> prod_{k<=j} (1 - lambda_k/i), i in {2, 3}
    W: np.ndarray            # sum_{k<=j} alpha_k
    Wp: np.ndarray           # sum_{k<=j} alpha_k (1 - alpha_k)
    lambda_star: np.ndarray  # running min of lambda_1..lambda_j; +inf at j=0
    v: np.ndarray            # sum gamma_{k-1} alpha_k (1 - lambda_k)/(1 + lambda_k)^2
    vp: np.ndarray           # sum gamma^(2)_{k-1} alpha_k (1 - lambda_k)
    vpp: np.ndarray          # sum gamma^(3)_{k-1} lambda_k (1 - lambda_k)
    u: np.ndarray            # sum alpha_k (1 - alpha_k) gamma_{k-1}
    up: np.ndarray           # sum lambda_k gamma_{k-1}
    upp: np.ndarray          # sum_{i<j} lambda_{i+1}(1-lambda_{i+1}) gamma_i sum_{k<=i} lambda_k
    u_wide: np.ndarray       # wide-range variant of u, with gamma^(2)
    up_wide: np.ndarray      # wide-range variant of u', with gamma^(3)
    upp_wide: np.ndarray     # wide-range variant of u''

    def gamma_shifted(self, order: float) -> np.ndarray:
        """gamma^(order) for a real order, prod_{k<=j} (1 - lambda_k/order)."""
        return gamma_sequence(self.lam, order)


def gamma_sequence(lam: np.ndarray, order: float) -> np.ndarray:
    """Cumulative products prod_{k<=j} (1 - lambda_k/order), j = 0..len(lam)."""
    if not order > 0:
        raise ValueError("order must be positive")
    out = np.empty(len(lam) + 1)
    out[0] = 1.0
    np.cumprod(1.0 - np.asarray(lam, dtype=float) / order, out=out[1:])
    return out


def build_schedule(
    lambdas: Sequence[float] | None = None,
    *,
    mm_C: float | None = None,
    mm_D: float | None = None,
) -> EfficiencySchedule:
    """Validate a schedule description.

    Pass either ``lambdas`` (efficiencies in [0, 1], at least one) or both
    ``mm_C`` and ``mm_D`` for a population-dependent schedule. Exactly one
    form must be given.
    """
    if lambdas is not None:
        if mm_C is not None or mm_D is not None:
            raise ValueError("give either an efficiency vector or (mm_C, mm_D), not both")
        lam = tuple(float(x) for x in lambdas)
        if not lam:
            raise ValueError("empty efficiency sequence")
        for k, x in enumerate(lam, start=1):
            if not math.isfinite(x) or not 0.0 <= x <= 1.0:
                raise ValueError(f"efficiency lambda_{k}={x} outside [0, 1]")
        return EfficiencySchedule(kind="deterministic", lambdas=lam)
    if mm_C is None or mm_D is None:
        raise ValueError("schedule needs an efficiency vector or both mm_C and mm_D")
    if not (mm_C > 0.0 and mm_D > 0.0):
        raise ValueError("rate constants must be positive")
    return EfficiencySchedule(kind="michaelis_menten", mm_C=float(mm_C), mm_D=float(mm_D))


def mm_lambda(S_prev: int, C: float, D: float) -> float:
    """Efficiency of the next cycle in an enzyme-limited reaction.

    The duplication probability decays with the current population size as
    D/(C + S_prev). Requires D <= C + S_prev so the result is a probability;
    this holds for all later cycles once it holds for the first.
    """
    if S_prev < 1:
        raise ValueError("population size must be at least 1")
    if not (C > 0.0 and D > 0.0):
        raise ValueError("rate constants must be positive")
    if D > C + S_prev:
        raise ValueError(f"D={D} exceeds C + S_prev={C + S_prev}, efficiency would exceed 1")
    return D / (C + S_prev)


def derived_sequences(sched: EfficiencySchedule, n: int) -> DerivedSequences:
    """Compute every derived sequence of the first n cycles of a schedule.

    Left-to-right accumulation throughout, so the result for m < n cycles is
    an exact prefix of the result for n cycles.
    """
    if n < 0:
        raise ValueError("cycle count must be nonnegative")
    lam = sched.prefix(n)
    alpha = lam / (1.0 + lam)
    one_minus = 1.0 - lam

    gamma = np.empty(n + 1)
    gamma[0] = 1.0
    np.cumprod(1.0 / (1.0 + lam), out=gamma[1:])
    g2 = gamma_sequence(lam, 2.0)
    g3 = gamma_sequence(lam, 3.0)

    def zero_prefixed_cumsum(terms: np.ndarray) -> np.ndarray:
        out = np.empty(n + 1)
        out[0] = 0.0
        np.cumsum(terms, out=out[1:])
        return out

    W = zero_prefixed_cumsum(alpha)
    Wp = zero_prefixed_cumsum(alpha * (1.0 - alpha))

    lambda_star = np.empty(n + 1)
    lambda_star[0] = np.inf
    if n:
        np.minimum.accumulate(lam, out=lambda_star[1:])

    v = zero_prefixed_cumsum(gamma[:-1] * alpha * one_minus / (1.0 + lam) ** 2)
    vp = zero_prefixed_cumsum(g2[:-1] * alpha * one_minus)
    # The upper-correction sum uses the weight lambda_k (1 - lambda_k); the
    # per-cycle sharp bound carries alpha_k (1 - lambda_k) instead, which is
    # smaller by 1/(1 + lambda_k), so this tabulation stays a valid bound.
    # The convention here matches the reference table the golden fixture pins.
    vpp = zero_prefixed_cumsum(g3[:-1] * lam * one_minus)

    u = zero_prefixed_cumsum(alpha * (1.0 - alpha) * gamma[:-1])
    up = zero_prefixed_cumsum(lam * gamma[:-1])
    u_wide = zero_prefixed_cumsum(alpha * (1.0 - alpha) * g2[:-1])
    up_wide = zero_prefixed_cumsum(lam * g3[:-1])

    # The double sums collapse after swapping the summation order:
    # upp[j] = sum_{i=1}^{j-1} lambda_{i+1}(1-lambda_{i+1}) gamma_i * Lsum_i,
    # with Lsum_i the partial sum of lambda_1..lambda_i; same shape for the
    # wide variant with gamma^(2) and weights alpha_k/(1 - lambda_k/2).
    upp = np.zeros(n + 1)
    upp_wide = np.zeros(n + 1)
    if n >= 2:
        Lsum = np.cumsum(lam)
        Csum = np.cumsum(alpha / (1.0 - lam / 2.0))
        inner = lam[1:] * one_minus[1:]
        np.cumsum(inner * gamma[1:-1] * Lsum[:-1], out=upp[2:])
        np.cumsum(inner * g2[1:-1] * Csum[:-1], out=upp_wide[2:])

    return DerivedSequences(
        n=n,
        lam=lam,
        alpha=alpha,
        gamma=gamma,
        gamma_i={2: g2, 3: g3},
        W=W,
        Wp=Wp,
        lambda_star=lambda_star,
        v=v,
        vp=vp,
        vpp=vpp,
        u=u,
        up=up,
        upp=upp,
        u_wide=u_wide,
        up_wide=up_wide,
        upp_wide=upp_wide,
    )
