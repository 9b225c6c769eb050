"""Episode-level Monte Carlo of the two-household allocation game."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import GainModel, ShapeSpec, base_mean, sample
from .dp import DPSolution

AGENTS = ("policy", "dp", "prophet")
_CHUNK = 20_000


@dataclass(frozen=True)
class EpisodeConfig:
    """One simulation study.

    ``baseline`` is either a :class:`ShapeSpec` for the baseline welfare
    ``w_i`` or a constant. Episodes are split across ``substreams``
    generators spawned from ``seed``.
    """

    T: int
    K: int
    improvement_spec: ShapeSpec
    baseline: ShapeSpec | float = 0.0
    seed: int = 0
    n_episodes: int = 10_000
    substreams: int = 1

    def __post_init__(self):
        if self.n_episodes < 1:
            raise ValueError("need at least one episode")
        if self.T < 1 or self.K < 0:
            raise ValueError("need T >= 1 and K >= 0")
        if self.substreams < 1:
            raise ValueError("substreams must be positive")

    @property
    def mu_pol(self) -> float:
        """Expected per-period welfare under the needs-based default."""
        w = base_mean(self.baseline) if isinstance(self.baseline, ShapeSpec) else float(self.baseline)
        return 2.0 * w + base_mean(self.improvement_spec)

    def gain_model(self) -> GainModel:
        return GainModel.from_shape(self.improvement_spec)


@dataclass
class _Acc:
    """Additive accumulator; merging is associative."""

    T: int
    n: int = 0
    sums: dict = field(default_factory=lambda: {a: 0.0 for a in AGENTS + ("excess",)})
    sq: dict = field(default_factory=lambda: {a: 0.0 for a in AGENTS + ("excess",)})
    misaligned: np.ndarray = None
    dp_spends: np.ndarray = None
    prophet_spends: np.ndarray = None
    violations: int = 0

    def __post_init__(self):
        z = lambda: np.zeros(self.T, dtype=np.int64)  # noqa: E731
        self.misaligned, self.dp_spends, self.prophet_spends = z(), z(), z()

    def merge(self, other: _Acc) -> None:
        self.n += other.n
        for a in self.sums:
            self.sums[a] += other.sums[a]
            self.sq[a] += other.sq[a]
        self.misaligned += other.misaligned
        self.dp_spends += other.dp_spends
        self.prophet_spends += other.prophet_spends
        self.violations += other.violations


@dataclass(frozen=True)
class AgentSummary:
    mean: float
    se: float


@dataclass(frozen=True)
class EpisodeResult:
    """Means and standard errors per agent plus per-period spend counts."""

    n_episodes: int
    welfare_policy: AgentSummary
    welfare_dp: AgentSummary
    welfare_oracle: AgentSummary
    excess_dp: AgentSummary
    misaligned_counts: np.ndarray
    dp_spend_counts: np.ndarray
    oracle_spend_counts: np.ndarray
    ordering_violations: int
    has_dp: bool = True

    @property
    def spend_times_dp(self) -> np.ndarray:
        return self.dp_spend_counts / self.n_episodes

    @property
    def p_hat(self) -> float:
        """Empirical alignment frequency."""
        return 1.0 - self.misaligned_counts.sum() / (self.n_episodes * len(self.misaligned_counts))

    def conditional_spend(self, agent: str = "dp") -> np.ndarray:
        """Per-period spend frequency given misalignment in that period."""
        counts = self.dp_spend_counts if agent == "dp" else self.oracle_spend_counts
        return counts / np.maximum(self.misaligned_counts, 1)


def _summary(acc: _Acc, key: str) -> AgentSummary:
    n = acc.n
    mean = acc.sums[key] / n
    var = max(acc.sq[key] / n - mean * mean, 0.0) * n / max(n - 1, 1)
    return AgentSummary(mean, math.sqrt(var / n))


def _run_chunk(cfg: EpisodeConfig, sol: DPSolution | None, rng_w, rng_i, n: int) -> _Acc:
    T, K = cfg.T, cfg.K
    acc = _Acc(T, n=n)
    if isinstance(cfg.baseline, ShapeSpec):
        w = np.sort(sample(cfg.baseline, rng_w, (n, T, 2)), axis=-1)
        base_total = w.sum(axis=(1, 2))
    else:
        base_total = np.full(n, 2.0 * T * float(cfg.baseline))
    # Improvements are independent of baselines, so the pair can be drawn
    # directly in (neediest, better-off) order; realized gains then do not
    # depend on which baseline stream was used.
    imp = sample(cfg.improvement_spec, rng_i, (n, T, 2))
    i_m, i_big = imp[..., 0], imp[..., 1]
    gain = np.maximum(i_big - i_m, 0.0)
    mis = gain > 0.0
    acc.misaligned += mis.sum(axis=0)

    policy = base_total + i_m.sum(axis=1)

    # prophet: keep the K largest positive gains, summed in time order
    chosen = np.zeros_like(mis)
    if K >= T:
        chosen = mis.copy()
    elif K > 0:
        top = np.argsort(-gain, axis=1, kind="stable")[:, :K]
        np.put_along_axis(chosen, top, True, axis=1)
        chosen &= mis
    prophet_gain = np.zeros(n)
    dp_gain = np.zeros(n)
    budget = np.full(n, K)
    for t in range(T):
        g = gain[:, t]
        prophet_gain += np.where(chosen[:, t], g, 0.0)
        if sol is not None:
            tau = T - t
            thr = sol.thresholds[tau, budget]
            spend = (budget > 0) & mis[:, t] & (g >= thr)
            dp_gain += np.where(spend, g, 0.0)
            budget -= spend
            acc.dp_spends[t] += int(spend.sum())
    acc.prophet_spends += chosen.sum(axis=0)

    totals = {"policy": policy, "dp": policy + dp_gain, "prophet": policy + prophet_gain,
              "excess": dp_gain}
    for key, v in totals.items():
        acc.sums[key] = float(v.sum())
        acc.sq[key] = float(v @ v)
    if sol is not None:
        acc.violations = int(np.count_nonzero((dp_gain < 0.0) | (dp_gain > prophet_gain)
                                              | (budget < 0)))
    return acc


def _simulate(cfg: EpisodeConfig, sol: DPSolution | None) -> EpisodeResult:
    total = _Acc(cfg.T)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.substreams)
    base, extra = divmod(cfg.n_episodes, cfg.substreams)
    for i, child in enumerate(children):
        ss_w, ss_i = child.spawn(2)
        rng_w, rng_i = np.random.default_rng(ss_w), np.random.default_rng(ss_i)
        todo = base + (1 if i < extra else 0)
        while todo > 0:
            m = min(_CHUNK, todo)
            total.merge(_run_chunk(cfg, sol, rng_w, rng_i, m))
            todo -= m
    return EpisodeResult(
        n_episodes=total.n,
        welfare_policy=_summary(total, "policy"),
        welfare_dp=_summary(total, "dp"),
        welfare_oracle=_summary(total, "prophet"),
        excess_dp=_summary(total, "excess"),
        misaligned_counts=total.misaligned,
        dp_spend_counts=total.dp_spends,
        oracle_spend_counts=total.prophet_spends,
        ordering_violations=total.violations,
        has_dp=sol is not None,
    )


def simulate_episodes(cfg: EpisodeConfig, sol: DPSolution) -> EpisodeResult:
    """Run policy-compliant, DP-threshold and prophet agents on shared draws.

    ``sol`` must be solved for ``(cfg.T, cfg.K)`` and the two-draw gain model
    of ``cfg.improvement_spec``.
    """
    if sol.T != cfg.T or sol.K != cfg.K:
        raise ValueError(f"solution is for (T={sol.T}, K={sol.K}), config has "
                         f"(T={cfg.T}, K={cfg.K})")
    return _simulate(cfg, sol)


def prophet_value(cfg: EpisodeConfig) -> float:
    """Mean welfare of the clairvoyant agent that keeps the ``K`` largest gains."""
    return _simulate(cfg, None).welfare_oracle.mean


def empirical_profile(result: EpisodeResult, min_episodes: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """Per-period DP spend frequencies and their binomial standard errors."""
    if not result.has_dp:
        raise ValueError("result carries no DP agent")
    if result.n_episodes < min_episodes:
        raise ValueError(f"need at least {min_episodes} episodes, got {result.n_episodes}")
    freq = result.spend_times_dp
    return freq, np.sqrt(freq * (1.0 - freq) / result.n_episodes)


def summary_rows(result: EpisodeResult) -> list[dict]:
    rows = [("policy", result.welfare_policy), ("dp", result.welfare_dp),
            ("prophet", result.welfare_oracle)]
    return [{"agent": a, "mean_welfare": s.mean, "se": s.se, "episodes": result.n_episodes}
            for a, s in rows]


def profile_rows(result: EpisodeResult, spend_prob_theory) -> list[dict]:
    freq = result.spend_times_dp
    return [{"t": t + 1, "freq_dp": float(freq[t]), "spend_prob_theory": float(spend_prob_theory[t])}
            for t in range(len(freq))]
