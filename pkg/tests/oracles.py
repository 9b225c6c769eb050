"""Reference implementations used only by the tests."""

import itertools


def brute_force_excess(T, K, values, probs, p):
    """Optimal expected excess gain by recursion over every gain history.

    Each period the gain is 0 with probability ``p`` and ``values[j]`` with
    probability ``(1 - p) * probs[j]``; the agent sees it and chooses whether
    to spend one unit. No identity from the solver is used.
    """
    outcomes = [(0.0, p)] + [(v, (1 - p) * w) for v, w in zip(values, probs)]

    def value(tau, k):
        if tau == 0 or k == 0:
            return 0.0
        total = 0.0
        for g, prob in outcomes:
            keep = value(tau - 1, k)
            take = g + value(tau - 1, k - 1) if g > 0 else keep
            total += prob * max(keep, take)
        return total

    return [[value(tau, k) for k in range(K + 1)] for tau in range(T + 1)]


def prophet_excess(T, K, values, probs, p):
    """Expected sum of the ``K`` largest gains by enumerating all sequences."""
    outcomes = [(0.0, p)] + [(v, (1 - p) * w) for v, w in zip(values, probs)]
    total = 0.0
    for seq in itertools.product(outcomes, repeat=T):
        prob = 1.0
        for _, q in seq:
            prob *= q
        total += prob * sum(sorted((g for g, _ in seq), reverse=True)[:K])
    return total
