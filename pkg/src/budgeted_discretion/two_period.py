"""Closed-form results for two periods and a single override."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import GainModel, partial_expectation_mis, psi_of_shape


@dataclass(frozen=True)
class RegimeFlags:
    conservative_t1: bool
    aggressive_t2: bool
    internally_patient: bool

    def as_dict(self) -> dict:
        return {"conservative_t1": self.conservative_t1,
                "aggressive_t2": self.aggressive_t2,
                "internally_patient": self.internally_patient}


@dataclass(frozen=True)
class TwoPeriodResult:
    threshold_T21: float
    psi: float
    p: float
    regime_flags: RegimeFlags


def threshold_T21(model: GainModel) -> float:
    """First-period cutoff: the expected one-period gain ``(1 - p) E[Delta | mis]``."""
    return (1.0 - model.p) * partial_expectation_mis(model, 0.0)


def psi_value(model: GainModel) -> float:
    """Probability of holding the budget in period 1, ``F_Delta(T_21)``.

    Two-draw models are evaluated on their standardized shape so the value is
    identical for every location and scale.
    """
    if model.base is not None:
        return psi_of_shape(model.base)
    if model.p >= 1.0:
        return 1.0
    return model.p + (1.0 - model.p) * model.cdf_mis(threshold_T21(model))


def classify_regimes(psi: float, p: float) -> RegimeFlags:
    """Regime flags from the two-period comparison inequalities.

    Strict inequalities: equality at a boundary yields ``False``.
    """
    for name, v in (("psi", psi), ("p", p)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return RegimeFlags(
        conservative_t1=psi > (1.0 - p) / 2.0,
        aggressive_t2=psi > 0.5,
        internally_patient=psi > (1.0 - p) / (2.0 - p),
    )


def oracle_conditional_spend_prob(p: float) -> float:
    """Clairvoyant spend probability in a period, given misalignment there."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return (1.0 + p) / 2.0


def dp_conditional_spend_probs(model: GainModel) -> tuple[float, float]:
    """Optimal policy's spend probabilities given misalignment in period 1 and 2.

    Period 1 spends when the gain clears ``T_21``; period 2 spends whenever
    the budget survived period 1.
    """
    f_mis = model.cdf_mis(threshold_T21(model)) if model.p < 1.0 else 1.0
    return 1.0 - f_mis, model.p + (1.0 - model.p) * f_mis


def solve_two_period(model: GainModel) -> TwoPeriodResult:
    psi = psi_value(model)
    return TwoPeriodResult(threshold_T21(model), psi, model.p, classify_regimes(psi, model.p))


@dataclass(frozen=True)
class TwoPeriodSim:
    """Conditional spend frequencies from simulated two-period episodes.

    ``dp1``/``dp2`` and ``oracle1``/``oracle2`` estimate the probability of
    spending in period 1 or 2 given misalignment in that period; ``se`` holds
    matching binomial standard errors keyed by the same names.
    """

    dp1: float
    dp2: float
    oracle1: float
    oracle2: float
    se: dict
    n: int


def simulate_two_period(model: GainModel, n: int, seed) -> TwoPeriodSim:
    """Play ``n`` episodes with ``T = 2``, ``K = 1`` for the optimal and the
    clairvoyant agent on shared gain draws.

    The clairvoyant agent spends on the larger of the two gains (period 1 on
    ties, which have probability zero for continuous laws).
    """
    if n < 2:
        raise ValueError("need at least two episodes")
    rng = np.random.default_rng(seed)
    g1 = model.sample(rng, n)
    g2 = model.sample(rng, n)
    cut = threshold_T21(model)
    dp_spend1 = (g1 > 0) & (g1 >= cut)
    dp_spend2 = ~dp_spend1 & (g2 > 0)
    or_spend1 = (g1 > 0) & (g1 >= g2)
    or_spend2 = (g2 > 0) & (g2 > g1)
    mis1, mis2 = g1 > 0, g2 > 0
    est, se = {}, {}
    for name, hit, mis in (("dp1", dp_spend1, mis1), ("dp2", dp_spend2, mis2),
                           ("oracle1", or_spend1, mis1), ("oracle2", or_spend2, mis2)):
        m = int(mis.sum())
        f = int((hit & mis).sum()) / m
        est[name], se[name] = f, math.sqrt(f * (1.0 - f) / m)
    return TwoPeriodSim(est["dp1"], est["dp2"], est["oracle1"], est["oracle2"], se, n)


def empirical_regimes(sim: TwoPeriodSim) -> RegimeFlags:
    """Regimes read off simulated behaviour.

    Conservative: the optimal agent spends less often than the oracle in
    period 1. Aggressive: it spends more often than the oracle in period 2.
    Internally patient: it spends more often in period 2 than in period 1.
    """
    return RegimeFlags(
        conservative_t1=sim.dp1 < sim.oracle1,
        aggressive_t2=sim.dp2 > sim.oracle2,
        internally_patient=sim.dp2 > sim.dp1,
    )
