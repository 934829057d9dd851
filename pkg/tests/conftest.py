"""Shared helpers for the test suite."""

import numpy as np

from qaoi_whittle.submdp import SubMdpParams, ThresholdPolicy


def random_params(rng, d_max_range=(2, 25), p_range=(0.05, 0.999), p_one=False):
    dm = int(rng.integers(d_max_range[0], d_max_range[1] + 1))
    return SubMdpParams(
        lam=float(rng.uniform(0.05, 0.95)),
        gamma=float(rng.uniform(0.05, 0.95)),
        p=1.0 if p_one else float(rng.uniform(*p_range)),
        d_max=dm,
    )


def random_policy(rng, d_max):
    return ThresholdPolicy(
        int(rng.integers(1, d_max + 2)), int(rng.integers(1, d_max + 2))
    )


def age_only_oracle_index(d_max, p, age, tol=1e-9):
    """Independent index oracle for the query-blind age chain: relative
    value iteration over ages plus bisection on the scheduling cost."""
    cost = np.arange(1, d_max + 1).astype(float)
    nxt = np.minimum(np.arange(2, d_max + 2), d_max) - 1

    def passive(c):
        h = np.zeros(d_max)
        for _ in range(500_000):
            q0 = cost + h[nxt]
            q1 = cost + c + p * h[0] + (1 - p) * h[nxt]
            hn = 0.5 * (h + np.minimum(q0, q1))
            hn -= hn[0]
            delta = hn - h
            h = hn
            if delta.max() - delta.min() < 1e-12:
                break
        q0 = cost + h[nxt]
        q1 = cost + c + p * h[0] + (1 - p) * h[nxt]
        return q1[age - 1] >= q0[age - 1]

    hi = 1.0
    while not passive(hi):
        hi *= 2.0
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if passive(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
