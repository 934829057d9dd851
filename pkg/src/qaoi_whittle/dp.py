"""Dynamic-programming ground truth for one arm and tiny joint networks.

Everything here exists to validate the analytical index machinery:
discounted value iteration, average-cost relative value iteration, a
brute-force index oracle (bisection on the scheduling cost), discounted
policy evaluation for the active-time indexability condition, and an
exact solver for joint networks small enough to enumerate.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CapacityError, DomainError, NumericalError, StructuralError
from .submdp import (
    ACTIVE,
    PASSIVE,
    Action,
    State,
    SubMdpParams,
    ThresholdPolicy,
    cost_vectors,
    enumerate_states,
    policy_action,
    state_index,
    transition_matrices,
)

# Damping for relative value iteration: the half-lazy Bellman operator has
# the same fixed point but converges even when a policy chain is periodic
# (deterministic reset cycles on error-free channels).
_RVI_DAMPING = 0.5
_MAX_ITER = 1_000_000

# Last converged bias per parameter set, reused to warm-start the next
# solve at a nearby scheduling cost (bisection sweeps benefit the most).
_rvi_warm: Dict[SubMdpParams, np.ndarray] = {}


@dataclass
class ValueTable:
    """Converged discounted values and the greedy policy (ties passive)."""

    params: SubMdpParams
    beta: float
    c: float
    values: np.ndarray
    policy: np.ndarray

    def value(self, s: State) -> float:
        return float(self.values[state_index(s, self.params.d_max)])

    def action(self, s: State) -> Action:
        return int(self.policy[state_index(s, self.params.d_max)])


@dataclass
class AverageRewardSolution:
    """Average-cost solution: gain, bias anchored at (1,0), greedy policy."""

    params: SubMdpParams
    c: float
    gain: float
    bias: np.ndarray
    policy: np.ndarray

    def bias_of(self, s: State) -> float:
        return float(self.bias[state_index(s, self.params.d_max)])

    def action(self, s: State) -> Action:
        return int(self.policy[state_index(s, self.params.d_max)])


@dataclass
class DiscountedPolicyEvaluation:
    """Discounted evaluation of a fixed threshold policy: total cost v,
    query-age part j, and expected discounted total active time anchored
    at each first action."""

    params: SubMdpParams
    policy: ThresholdPolicy
    beta: float
    c: float
    v: np.ndarray
    j: np.ndarray
    a_time: np.ndarray  # shape (n_states, 2), columns = first action

    def v_of(self, s: State) -> float:
        return float(self.v[state_index(s, self.params.d_max)])

    def j_of(self, s: State) -> float:
        return float(self.j[state_index(s, self.params.d_max)])

    def a_time_of(self, s: State, a: Action) -> float:
        return float(self.a_time[state_index(s, self.params.d_max), a])


def discounted_value_iteration(
    params: SubMdpParams, c: float, beta: float, tol: float = 1e-9
) -> ValueTable:
    """Value iteration from zero values until the sup-norm step drops
    below tol*(1-beta)/(2*beta); ties between actions go passive."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    if not (0.0 < beta < 1.0):
        raise DomainError("beta must lie in (0,1)")
    p0, p1 = transition_matrices(params)
    c0, c1 = cost_vectors(params, c)
    v = np.zeros(params.n_states)
    stop = tol * (1.0 - beta) / (2.0 * beta)
    for _ in range(_MAX_ITER):
        q0 = c0 + beta * (p0 @ v)
        q1 = c1 + beta * (p1 @ v)
        nxt = np.minimum(q0, q1)
        delta = float(np.max(np.abs(nxt - v)))
        v = nxt
        if delta < stop:
            break
    else:
        raise NumericalError("discounted value iteration did not converge")
    q0 = c0 + beta * (p0 @ v)
    q1 = c1 + beta * (p1 @ v)
    policy = (q1 < q0).astype(np.int8)
    return ValueTable(params=params, beta=beta, c=c, values=v, policy=policy)


def _rvi_core(
    params: SubMdpParams,
    c: float,
    tol: float,
    h_init: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray, np.ndarray]:
    p0, p1 = transition_matrices(params)
    c0, c1 = cost_vectors(params, c)
    h = np.zeros(params.n_states) if h_init is None else h_init.copy()
    tau = _RVI_DAMPING
    for _ in range(_MAX_ITER):
        th = np.minimum(c0 + p0 @ h, c1 + p1 @ h)
        nxt = (1.0 - tau) * h + tau * th
        nxt -= nxt[0]
        delta = nxt - h
        span = float(delta.max() - delta.min())
        h = nxt
        if span < tol:
            break
    else:
        raise NumericalError("relative value iteration did not converge")
    q0 = c0 + p0 @ h
    q1 = c1 + p1 @ h
    diff = np.minimum(q0, q1) - h
    gain = 0.5 * (float(diff.min()) + float(diff.max()))
    policy = (q1 < q0).astype(np.int8)
    return gain, h, policy


def relative_value_iteration(
    params: SubMdpParams, c: float, tol: float = 1e-10
) -> AverageRewardSolution:
    """Average-cost solution by relative value iteration anchored at the
    post-reception state (age 1, no query); stops when the span of
    successive bias differences falls below tol."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    gain, h, policy = _rvi_core(params, c, tol, _rvi_warm.get(params))
    _rvi_warm[params] = h
    return AverageRewardSolution(params=params, c=c, gain=gain, bias=h, policy=policy)


def extract_thresholds(
    policy: Union[np.ndarray, Mapping[State, Action]],
    d_max: Optional[int] = None,
) -> ThresholdPolicy:
    """Smallest scheduling age per query branch (d_max+1 when the branch
    never schedules); raises if the policy is not monotone in age."""
    if isinstance(policy, Mapping):
        if d_max is None:
            d_max = max(s.age for s in policy)
        flat = np.zeros(2 * d_max, dtype=np.int8)
        for s, a in policy.items():
            flat[state_index(s, d_max)] = a
    else:
        flat = np.asarray(policy)
        if d_max is None:
            d_max = flat.shape[0] // 2
    thresholds = []
    for q in (0, 1):
        row = flat[q * d_max : (q + 1) * d_max]
        active = np.nonzero(row)[0]
        if active.size == 0:
            thresholds.append(d_max + 1)
            continue
        first = int(active[0])
        if not np.all(row[first:]):
            bad = first + int(np.nonzero(row[first:] == 0)[0][0])
            raise StructuralError(
                f"policy is not threshold-type: idle at age {bad + 1}, "
                f"query {q}, after scheduling at age {first + 1}"
            )
        thresholds.append(first + 1)
    return ThresholdPolicy(thresholds[0], thresholds[1])


def discounted_policy_evaluation(
    params: SubMdpParams,
    policy: ThresholdPolicy,
    c: float,
    beta: float,
    tol: float = 1e-12,
) -> DiscountedPolicyEvaluation:
    """Fixed-point evaluation of the discounted query-age cost and the
    discounted total active times under a threshold policy (solved as
    linear systems, exact to machine precision)."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    if not (0.0 < beta < 1.0):
        raise DomainError("beta must lie in (0,1)")
    p0, p1 = transition_matrices(params)
    n = params.n_states
    acts = np.array(
        [policy_action(policy, s) for s in enumerate_states(params.d_max)],
        dtype=np.int8,
    )
    p_pi = np.where(acts[:, None] == ACTIVE, p1, p0)
    c_j, _ = cost_vectors(params, 0.0)
    lhs = np.eye(n) - beta * p_pi
    j = np.linalg.solve(lhs, c_j)
    a = np.linalg.solve(lhs, acts.astype(float))
    a_time = np.stack([beta * (p0 @ a), 1.0 + beta * (p1 @ a)], axis=1)
    v = j + c * a
    return DiscountedPolicyEvaluation(
        params=params, policy=policy, beta=beta, c=c, v=v, j=j, a_time=a_time
    )


def oracle_whittle_index(
    params: SubMdpParams, s: State, tol: float = 1e-7
) -> float:
    """Brute-force index: bisection on the scheduling cost for the point
    where the state enters the passive set of the average-cost optimal
    policy.  Independent of the analytical index algorithm."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    idx = state_index(s, params.d_max)
    rvi_tol = min(1e-10, tol * 1e-2)

    def passive_at(cost: float) -> bool:
        gain, h, policy = _rvi_core(params, cost, rvi_tol, _rvi_warm.get(params))
        _rvi_warm[params] = h
        return policy[idx] == PASSIVE

    if passive_at(0.0):
        raise StructuralError(
            f"state {s} is already passive at zero scheduling cost; "
            "index bracket does not start at 0"
        )
    hi = 1.0
    while not passive_at(hi):
        hi *= 2.0
        if hi > 2.0**40:
            raise NumericalError("no finite passivity point found")
    lo = hi / 2.0 if hi > 1.0 else 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if passive_at(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass
class JointAverageRewardSolution:
    """Exact average-cost solution of a small joint network.

    gain is the expected per-slot sum of query-ages across all arms
    (N times the ESQAoI); states are indexed arm-0-major over the
    per-arm flat indices; policy holds positions into ``actions``.
    """

    configs: Tuple[SubMdpParams, ...]
    m: int
    gain: float
    bias: np.ndarray
    policy: np.ndarray
    actions: List[Tuple[int, ...]]

    def joint_index(self, states: Sequence[State]) -> int:
        idx = 0
        for params, s in zip(self.configs, states):
            idx = idx * params.n_states + state_index(s, params.d_max)
        return idx

    def scheduled_arms(self, states: Sequence[State]) -> Tuple[int, ...]:
        return self.actions[int(self.policy[self.joint_index(states)])]


def solve_joint_mdp(
    configs: Sequence[SubMdpParams],
    m: int,
    tol: float = 1e-9,
    cap: int = 10**6,
) -> JointAverageRewardSolution:
    """Relative value iteration over the full product chain with all
    schedule-at-most-m subsets as actions.  The kernel is applied arm by
    arm (tensor contraction), never materialised jointly."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    n = len(configs)
    if not (0 < m <= n):
        raise DomainError(f"need 0 < m <= {n} channels, got {m}")
    sizes = [p.n_states for p in configs]
    total = math.prod(sizes)
    if total > cap:
        raise CapacityError(
            f"joint state space {total} exceeds the cap {cap}"
        )
    mats = [transition_matrices(p) for p in configs]
    cost = np.zeros(sizes)
    for i, p in enumerate(configs):
        c_i, _ = cost_vectors(p, 0.0)
        shape = [1] * n
        shape[i] = sizes[i]
        cost = cost + c_i.reshape(shape)
    actions: List[Tuple[int, ...]] = []
    for k in range(m + 1):
        actions.extend(itertools.combinations(range(n), k))

    def expected(h: np.ndarray, subset: Tuple[int, ...]) -> np.ndarray:
        v = h
        for arm in range(n):
            p_arm = mats[arm][1 if arm in subset else 0]
            v = np.moveaxis(np.tensordot(p_arm, v, axes=([1], [arm])), 0, arm)
        return v

    h = np.zeros(sizes)
    tau = _RVI_DAMPING
    for _ in range(_MAX_ITER):
        best = None
        for subset in actions:
            q = cost + expected(h, subset)
            best = q if best is None else np.minimum(best, q)
        nxt = (1.0 - tau) * h + tau * best
        nxt -= nxt.flat[0]
        delta = nxt - h
        span = float(delta.max() - delta.min())
        h = nxt
        if span < tol:
            break
    else:
        raise NumericalError("joint relative value iteration did not converge")
    stacked = np.stack([cost + expected(h, subset) for subset in actions])
    diff = stacked.min(axis=0) - h
    gain = 0.5 * (float(diff.min()) + float(diff.max()))
    policy = stacked.reshape(len(actions), -1).argmin(axis=0)
    return JointAverageRewardSolution(
        configs=tuple(configs),
        m=m,
        gain=gain,
        bias=h.ravel(),
        policy=policy,
        actions=actions,
    )
