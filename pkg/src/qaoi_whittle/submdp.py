"""Single-arm domain types and the exact transition/reward kernel.

One arm is a two-dimensional Markov decision process over (age, query
flag).  The age counts slots since the last update was received, capped
at ``d_max``; the query flag is a two-state Markov chain that decides
whether the age is charged this slot.  Scheduling the arm resets the age
to 1 with the channel success probability.  Every solver and the network
simulator consume this kernel, so it is the single source of truth for
the dynamics.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Dict, Iterator, Tuple

import numpy as np

from .errors import DomainError

# Actions are plain ints: 1 = schedule (active), 0 = idle (passive).
Action = int
PASSIVE: Action = 0
ACTIVE: Action = 1


@dataclass(frozen=True)
class SubMdpParams:
    """Parameters of one arm.

    lam:   probability the query flag switches 0 -> 1.
    gamma: probability the query flag switches 1 -> 0.
    p:     transmission success probability when scheduled.
    d_max: age truncation level (ages live in 1..d_max).
    """

    lam: float
    gamma: float
    p: float
    d_max: int

    def __post_init__(self) -> None:
        if not (0.0 < self.lam < 1.0):
            raise DomainError(f"lam must lie in (0,1), got {self.lam}")
        if not (0.0 < self.gamma < 1.0):
            raise DomainError(f"gamma must lie in (0,1), got {self.gamma}")
        if not (0.0 < self.p <= 1.0):
            raise DomainError(f"p must lie in (0,1], got {self.p}")
        if not (isinstance(self.d_max, int) and self.d_max >= 2):
            raise DomainError(f"d_max must be an integer >= 2, got {self.d_max}")

    @property
    def n_states(self) -> int:
        return 2 * self.d_max

    @property
    def query_on_rate(self) -> float:
        """Stationary probability of the query flag being 1."""
        return self.lam / (self.lam + self.gamma)


@dataclass(frozen=True)
class State:
    """State of one arm: age in 1..d_max, query flag in {0,1}."""

    age: int
    query: int

    def __post_init__(self) -> None:
        if self.query not in (0, 1):
            raise DomainError(f"query flag must be 0 or 1, got {self.query}")
        if self.age < 1:
            raise DomainError(f"age must be >= 1, got {self.age}")


# A probability table over the states of one arm.
StateDistribution = Dict[State, float]


@dataclass(frozen=True)
class ThresholdPolicy:
    """Schedule iff age >= h_q given query flag q.

    h_q = d_max + 1 is the never-schedule sentinel for that branch.
    """

    h0: int
    h1: int

    def threshold(self, query: int) -> int:
        return self.h1 if query else self.h0

    def never_schedules(self, d_max: int) -> bool:
        return self.h0 == d_max + 1 and self.h1 == d_max + 1


def state_index(s: State, d_max: int) -> int:
    """Flat index of a state: query-major, age-minor (internal contract)."""
    return s.query * d_max + (s.age - 1)


def enumerate_states(d_max: int) -> Iterator[State]:
    """All states in flat-index order."""
    for q in (0, 1):
        for d in range(1, d_max + 1):
            yield State(d, q)


def check_state(params: SubMdpParams, s: State) -> None:
    if not (1 <= s.age <= params.d_max):
        raise DomainError(
            f"age {s.age} out of range [1, {params.d_max}]"
        )


def immediate_cost(s: State, a: Action, c: float) -> float:
    """Per-slot cost: age charged when the query flag is on, plus the
    scheduling charge c when active."""
    return s.age * s.query + c * a


def policy_action(policy: ThresholdPolicy, s: State) -> Action:
    """Threshold rule: schedule iff age >= h_q for the current flag."""
    return ACTIVE if s.age >= policy.threshold(s.query) else PASSIVE


def transition_distribution(
    params: SubMdpParams, s: State, a: Action
) -> StateDistribution:
    """Exact one-step successor distribution.

    The age resets to 1 with probability p when scheduled and otherwise
    increments (clamped at d_max); the query flag evolves independently
    of the action.  Support size is at most 4.
    """
    check_state(params, s)
    if a not in (0, 1):
        raise DomainError(f"action must be 0 or 1, got {a}")
    d_up = min(s.age + 1, params.d_max)
    if a == ACTIVE:
        age_probs = {1: params.p, d_up: 1.0 - params.p}
    else:
        age_probs = {d_up: 1.0}
    if s.query == 0:
        query_probs = {0: 1.0 - params.lam, 1: params.lam}
    else:
        query_probs = {0: params.gamma, 1: 1.0 - params.gamma}
    dist: StateDistribution = {}
    for d_next, pd in age_probs.items():
        if pd == 0.0:
            continue
        for q_next, pq in query_probs.items():
            dist[State(d_next, q_next)] = dist.get(State(d_next, q_next), 0.0) + pd * pq
    return dist


@functools.lru_cache(maxsize=128)
def transition_matrices(params: SubMdpParams) -> Tuple[np.ndarray, np.ndarray]:
    """Dense one-step kernels (row-stochastic) for the passive and active
    actions, in flat state order.  Cached per parameter set; the returned
    arrays are read-only."""
    n = params.n_states
    mats = []
    for a in (PASSIVE, ACTIVE):
        m = np.zeros((n, n))
        for s in enumerate_states(params.d_max):
            i = state_index(s, params.d_max)
            for s_next, prob in transition_distribution(params, s, a).items():
                m[i, state_index(s_next, params.d_max)] += prob
        m.setflags(write=False)
        mats.append(m)
    return mats[0], mats[1]


def policy_kernel(params: SubMdpParams, policy: ThresholdPolicy) -> np.ndarray:
    """One-step kernel of the chain induced by a threshold policy."""
    passive, active = transition_matrices(params)
    n = params.n_states
    m = np.empty((n, n))
    for s in enumerate_states(params.d_max):
        i = state_index(s, params.d_max)
        src = active if policy_action(policy, s) == ACTIVE else passive
        m[i] = src[i]
    return m


def cost_vectors(params: SubMdpParams, c: float) -> Tuple[np.ndarray, np.ndarray]:
    """Per-state immediate costs for the passive and active actions."""
    qaoi = np.array(
        [s.age * s.query for s in enumerate_states(params.d_max)], dtype=float
    )
    return qaoi, qaoi + c
