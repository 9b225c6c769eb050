"""Finite-horizon budget dynamic program.

States are ``(tau, k)``: periods remaining and budget left. The solver works
with the excess value ``W(tau, k) = V(tau, k) - tau * mu_pol`` so the policy
baseline never has to be known. Writing the Bellman maximum as
``E[max(a, Delta + b)] = a + E[(Delta - (a - b))^+]`` turns each step into

    T(tau, k) = W(tau - 1, k) - W(tau - 1, k - 1)
    W(tau, k) = W(tau - 1, k) + (1 - p) * E[(Delta - T(tau, k))^+ | mis]

so a state costs one partial-expectation evaluation and no root finding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import GainModel, partial_expectation_mis


@dataclass(frozen=True, eq=False)
class DPSolution:
    """Solved grids for a ``(T, K)`` instance.

    ``W`` has shape ``(T + 1, K + 1)`` indexed ``[tau, k]``. ``thresholds``
    and ``q`` share that shape; row ``tau = 0`` and column ``k = 0`` hold the
    boundary values (``inf`` threshold, zero spend probability) so indexing by
    state never needs an offset.
    """

    T: int
    K: int
    p: float
    W: np.ndarray
    thresholds: np.ndarray
    q: np.ndarray
    model: GainModel

    def __post_init__(self):
        for arr in (self.W, self.thresholds, self.q):
            arr.setflags(write=False)

    @property
    def mean_gain(self) -> float:
        return (1.0 - self.p) * self.model.mean_mis

    def spends(self, tau: int, k: int, gain: float) -> bool:
        """Decision rule: spend on a misaligned period whose gain clears the threshold."""
        return k >= 1 and gain > 0.0 and gain >= self.thresholds[tau, k]


def solve(T: int, K: int, model: GainModel, tol: float = 1e-9) -> DPSolution:
    """Backward induction over ``tau = 1..T``.

    ``tol`` bounds the slack allowed when checking the grid invariants after
    the sweep; a violation raises :class:`ArithmeticError`.
    """
    if T < 0 or K < 0 or int(T) != T or int(K) != K:
        raise ValueError(f"horizon and budget must be non-negative integers, got T={T}, K={K}")
    T, K = int(T), int(K)
    p = model.p
    W = np.zeros((T + 1, K + 1))
    thr = np.full((T + 1, K + 1), np.inf)
    q = np.zeros((T + 1, K + 1))
    full = (1.0 - p) * partial_expectation_mis(model, 0.0) if K > 0 and T > 0 else 0.0
    for tau in range(1, T + 1):
        for k in range(1, K + 1):
            if k >= tau:
                # enough budget to take every misalignment
                t_k, gain = 0.0, full
            else:
                t_k = max(W[tau - 1, k] - W[tau - 1, k - 1], 0.0)
                gain = (1.0 - p) * partial_expectation_mis(model, t_k)
            thr[tau, k] = t_k
            W[tau, k] = W[tau - 1, k] + gain
            q[tau, k] = (1.0 - p) if t_k == 0.0 else 1.0 - model.cdf(t_k)
    sol = DPSolution(T, K, p, W, thr, q, model)
    _check(sol, tol)
    return sol


def _check(sol: DPSolution, tol: float) -> None:
    W, T, K = sol.W, sol.T, sol.K
    if T == 0 or K == 0:
        return
    scale = max(1.0, float(np.max(np.abs(W))))
    slack = tol * scale
    if np.any(np.diff(W, axis=0) < -slack) or np.any(np.diff(W, axis=1) < -slack):
        raise ArithmeticError("excess value is not monotone; partial expectations inaccurate")
    if np.any(sol.q < -tol) or np.any(sol.q > 1.0 - sol.p + tol):
        raise ArithmeticError("spend probability outside [0, 1 - p]")


@dataclass(frozen=True, eq=False)
class SpendingProfile:
    """Forward pass over calendar periods ``t = 1..T``.

    ``pi`` has shape ``(T + 1, K + 1)``; row ``t - 1`` is the budget law at
    the start of period ``t`` and the last row is the terminal law.
    """

    pi: np.ndarray
    spend_prob: np.ndarray

    @property
    def cumulative_spend(self) -> np.ndarray:
        return np.cumsum(self.spend_prob)

    @property
    def expected_terminal_budget(self) -> float:
        return float(self.pi[-1] @ np.arange(self.pi.shape[1]))


def spending_profile(sol: DPSolution) -> SpendingProfile:
    """Budget distribution and unconditional spend probability per period."""
    if not isinstance(sol, DPSolution):
        raise TypeError("spending_profile needs a solved DPSolution")
    T, K = sol.T, sol.K
    pi = np.zeros((T + 1, K + 1))
    spend = np.zeros(T)
    if T == 0:
        pi[0, K] = 1.0
        return SpendingProfile(pi, spend)
    pi[0, K] = 1.0
    for t in range(1, T + 1):
        tau = T - t + 1
        q = sol.q[tau]  # q[tau, 0] == 0
        cur = pi[t - 1]
        nxt = cur * (1.0 - q)
        nxt[:-1] += cur[1:] * q[1:]
        pi[t] = nxt
        spend[t - 1] = float(cur[1:] @ q[1:])
    return SpendingProfile(pi, spend)


def policy_value(sol: DPSolution, mu_pol: float) -> float:
    """Optimal expected welfare ``T * mu_pol + W(T, K)``."""
    return sol.T * mu_pol + float(sol.W[sol.T, sol.K])


def export_heatmap(sol: DPSolution) -> list[dict]:
    """Rows ``(tau, k, threshold, q)`` for ``tau >= 1`` and ``1 <= k <= K``."""
    return [{"tau": tau, "k": k, "threshold": float(sol.thresholds[tau, k]),
             "q": float(sol.q[tau, k])}
            for tau in range(1, sol.T + 1) for k in range(1, sol.K + 1)]


def export_profile(profile: SpendingProfile) -> list[dict]:
    """Rows ``t, spend_prob, pi_0..pi_K`` for ``t = 1..T``."""
    K = profile.pi.shape[1] - 1
    rows = []
    for t, sp in enumerate(profile.spend_prob, start=1):
        row = {"t": t, "spend_prob": float(sp)}
        row.update({f"pi_{k}": float(profile.pi[t - 1, k]) for k in range(K + 1)})
        rows.append(row)
    return rows


def export_grid(sol: DPSolution) -> list[dict]:
    """Full ``W`` grid as rows ``tau, k, W``."""
    return [{"tau": tau, "k": k, "W": float(sol.W[tau, k])}
            for tau in range(sol.T + 1) for k in range(sol.K + 1)]
