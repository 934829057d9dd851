"""Steady-state analysis of one arm under threshold policies.

Under a threshold policy the age axis splits into segments on which the
two-dimensional chain advances by one of three fixed 2x2 blocks (both
query branches idle, exactly one scheduling, both scheduling), with a
fourth block absorbing the tail at the age cap.  The stationary
distribution is therefore a linear image of the age-1 vector
(mu_{1,0}, mu_{1,1}), which a 2-variable linear system pins down.  This
module builds those blocks, solves the system, and returns the expected
average query-age J and scheduling rate A per policy, in O(d_max) time
for error-prone channels and O(1) arithmetic for error-free channels.

An independent power-iteration oracle over the full kernel is provided
for verification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import DomainError, NumericalError
from .submdp import (
    ACTIVE,
    State,
    StateDistribution,
    SubMdpParams,
    ThresholdPolicy,
    enumerate_states,
    policy_action,
    policy_kernel,
    state_index,
)

Mat2 = Tuple[float, float, float, float]  # row-major [[a, b], [c, d]]

_I2: Mat2 = (1.0, 0.0, 0.0, 1.0)

# Stationary entries below this are treated as formula bugs, not round-off.
_NEG_TOL = 1e-14


def _mul(m: Mat2, n: Mat2) -> Mat2:
    a, b, c, d = m
    e, f, g, h = n
    return (a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h)


def _inv(m: Mat2) -> Mat2:
    a, b, c, d = m
    det = a * d - b * c
    if det == 0.0:
        raise NumericalError("singular 2x2 block")
    return (d / det, -b / det, -c / det, a / det)


def _scale(m: Mat2, k: float) -> Mat2:
    return (m[0] * k, m[1] * k, m[2] * k, m[3] * k)


def _sub(m: Mat2, n: Mat2) -> Mat2:
    return (m[0] - n[0], m[1] - n[1], m[2] - n[2], m[3] - n[3])


def _as_array(m: Mat2) -> np.ndarray:
    return np.array([[m[0], m[1]], [m[2], m[3]]])


@dataclass(frozen=True)
class BlockMatrices:
    """The four per-segment 2x2 blocks for one (params, policy) pair.

    p4 is None exactly for the never-schedule policy, whose cap state is
    solved in closed form rather than through a block (the would-be
    block requires inverting I minus a stochastic matrix).
    """

    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray
    p4: Optional[np.ndarray]
    case_tag: str
    params: SubMdpParams
    policy: ThresholdPolicy


@dataclass(frozen=True)
class PolicyAverages:
    """Expected average query-age j, scheduling rate a, and the full
    stationary table mu for one threshold policy."""

    j: float
    a: float
    mu: StateDistribution


def _p1_tuple(params: SubMdpParams) -> Mat2:
    lam, gam = params.lam, params.gamma
    return (1.0 - lam, gam, lam, 1.0 - gam)


def _p2_tuple(params: SubMdpParams, policy: ThresholdPolicy) -> Mat2:
    lam, gam, p = params.lam, params.gamma, params.p
    if policy.h0 > policy.h1:
        return (1.0 - lam, (1.0 - p) * gam, lam, (1.0 - p) * (1.0 - gam))
    if policy.h0 < policy.h1:
        return ((1.0 - p) * (1.0 - lam), gam, (1.0 - p) * lam, 1.0 - gam)
    return _I2


def _p3_tuple(params: SubMdpParams) -> Mat2:
    return _scale(_p1_tuple(params), 1.0 - params.p)


def _case_tag_of(dm: int, h0: int, h1: int) -> str:
    h, hh = min(h0, h1), max(h0, h1)
    orient = "h0<h1" if h0 < h1 else "h1<=h0"
    if h == dm + 1:
        return "never-schedule"
    if hh < dm:
        return f"{orient}|Hhat<Dm"
    if hh == dm:
        return f"{orient}|H=Hhat=Dm" if h == dm else f"{orient}|H<Hhat=Dm"
    return f"{orient}|H=Dm,Hhat=Dm+1" if h == dm else f"{orient}|H<Dm,Hhat=Dm+1"


def _case_tag(params: SubMdpParams, policy: ThresholdPolicy) -> str:
    return _case_tag_of(params.d_max, policy.h0, policy.h1)


def _p4_tuple(params: SubMdpParams, policy: ThresholdPolicy) -> Optional[Mat2]:
    dm = params.d_max
    h, hh = min(policy.h0, policy.h1), max(policy.h0, policy.h1)
    p1, p2, p3 = _p1_tuple(params), _p2_tuple(params, policy), _p3_tuple(params)
    if h == dm + 1:
        return None
    if hh < dm:
        return _mul(_inv(_sub(_I2, p3)), p3)
    if hh == dm:
        inner = p1 if h == dm else p2
        return _mul(_inv(_sub(_I2, p3)), inner)
    inner = p1 if h == dm else p2
    return _mul(_inv(_sub(_I2, p2)), inner)


def _check_policy(params: SubMdpParams, policy: ThresholdPolicy) -> None:
    dm = params.d_max
    for h in (policy.h0, policy.h1):
        if not (1 <= h <= dm + 1):
            raise DomainError(f"threshold {h} out of range [1, {dm + 1}]")


def build_blocks(params: SubMdpParams, policy: ThresholdPolicy) -> BlockMatrices:
    """The four segment blocks plus the case tag of the cap-state split."""
    _check_policy(params, policy)
    p4 = _p4_tuple(params, policy)
    return BlockMatrices(
        p1=_as_array(_p1_tuple(params)),
        p2=_as_array(_p2_tuple(params, policy)),
        p3=_as_array(_p3_tuple(params)),
        p4=None if p4 is None else _as_array(p4),
        case_tag=_case_tag(params, policy),
        params=params,
        policy=policy,
    )


def power_p1(params: SubMdpParams, n: int) -> np.ndarray:
    """n-step power of the no-scheduling block, in closed form via the
    query chain's eigenstructure; O(1) per call."""
    if n < 0:
        raise DomainError("power must be non-negative")
    lam, gam = params.lam, params.gamma
    s = lam + gam
    x = (1.0 - s) ** n
    return np.array(
        [
            [(lam * x + gam) / s, (-gam * x + gam) / s],
            [(-lam * x + lam) / s, (gam * x + lam) / s],
        ]
    )


def power_p3(params: SubMdpParams, n: int) -> np.ndarray:
    """n-step power of the both-scheduling block: (1-p)^n times the
    no-scheduling power."""
    if n < 0:
        raise DomainError("power must be non-negative")
    return (1.0 - params.p) ** n * power_p1(params, n)


def power_p2(blocks: BlockMatrices, n: int) -> np.ndarray:
    """n-step power of the one-branch-scheduling block.

    Square-and-multiply in general; identity when the thresholds
    coincide; rank-one closed form on error-free channels.
    """
    if n < 0:
        raise DomainError("power must be non-negative")
    params, policy = blocks.params, blocks.policy
    if n == 0 or policy.h0 == policy.h1:
        return np.eye(2)
    if params.p == 1.0:
        lam, gam = params.lam, params.gamma
        if policy.h0 > policy.h1:
            return np.array(
                [[(1 - lam) ** n, 0.0], [lam * (1 - lam) ** (n - 1), 0.0]]
            )
        return np.array([[0.0, gam * (1 - gam) ** (n - 1)], [0.0, (1 - gam) ** n]])
    base = (blocks.p2[0, 0], blocks.p2[0, 1], blocks.p2[1, 0], blocks.p2[1, 1])
    acc: Mat2 = _I2
    while n:
        if n & 1:
            acc = _mul(acc, base)
        base = _mul(base, base)
        n >>= 1
    return _as_array(acc)


def _solve_2x2(
    r1: Tuple[float, float], r2: Tuple[float, float], rhs: Tuple[float, float], tag: str
) -> Tuple[float, float]:
    det = r1[0] * r2[1] - r1[1] * r2[0]
    if det == 0.0 or (isinstance(det, float) and not math.isfinite(det)):
        raise NumericalError(f"degenerate age-1 linear system (case {tag})")
    x = (rhs[0] * r2[1] - r1[1] * rhs[1]) / det
    y = (r1[0] * rhs[1] - rhs[0] * r2[0]) / det
    return x, y


def _never_schedule_j_a(params: SubMdpParams) -> Tuple[float, float]:
    return params.d_max * params.query_on_rate, 0.0


def _compute_terms(lam, gam, p, dm: int, h0: int, h1: int, keep_maps: bool = False):
    """Propagate the 2x2 maps M_D with mu_D = M_D mu_1 and accumulate the
    row forms of the normalization, age-1 balance, J and A functionals.
    Generic over the scalar type (floats or mpmath mpf)."""
    h, hh = min(h0, h1), max(h0, h1)
    p1: Mat2 = (1.0 - lam, gam, lam, 1.0 - gam)
    if h0 > h1:
        p2: Mat2 = (1.0 - lam, (1.0 - p) * gam, lam, (1.0 - p) * (1.0 - gam))
    elif h0 < h1:
        p2 = ((1.0 - p) * (1.0 - lam), gam, (1.0 - p) * lam, 1.0 - gam)
    else:
        p2 = _I2
    p3 = _scale(p1, 1.0 - p)
    if hh < dm:
        p4 = _mul(_inv(_sub(_I2, p3)), p3)
    elif hh == dm:
        p4 = _mul(_inv(_sub(_I2, p3)), p1 if h == dm else p2)
    else:
        p4 = _mul(_inv(_sub(_I2, p2)), p1 if h == dm else p2)

    m: Mat2 = _I2
    maps = [m] if keep_maps else None
    norm0 = norm1 = 1.0  # column sums of the identity
    j0 = j1 = 0.0
    a0 = a1 = 0.0
    b0 = b1 = 0.0  # age-1 balance row
    for d in range(1, dm + 1):
        if d > 1:
            if d == dm:
                block = p4
            elif d <= h:
                block = p1
            elif d <= hh:
                block = p2
            else:
                block = p3
            m = _mul(block, m)
            if keep_maps:
                maps.append(m)
            norm0 += m[0] + m[2]
            norm1 += m[1] + m[3]
        j0 += d * m[2]
        j1 += d * m[3]
        if d >= h0:
            a0 += m[0]
            a1 += m[1]
            b0 += (1.0 - lam) * p * m[0]
            b1 += (1.0 - lam) * p * m[1]
        if d >= h1:
            a0 += m[2]
            a1 += m[3]
            b0 += gam * p * m[2]
            b1 += gam * p * m[3]
    mu1 = _solve_2x2(
        (norm0, norm1), (1.0 - b0, -b1), (1.0, 0.0), _case_tag_of(dm, h0, h1)
    )
    j = j0 * mu1[0] + j1 * mu1[1]
    a = a0 * mu1[0] + a1 * mu1[1]
    return j, a, mu1, maps


def _error_prone_terms(
    params: SubMdpParams, h0: int, h1: int, keep_maps: bool = False
):
    return _compute_terms(
        params.lam, params.gamma, params.p, params.d_max, h0, h1, keep_maps
    )


def _ef_closed(lam, gam, dm: int, h0: int, h1: int):
    """Closed-form J, A and age-1 masses for p = 1 (no propagation loop).
    Generic over the scalar type (floats or mpmath mpf)."""
    s = lam + gam
    x = 1.0 - s
    swapped = h0 < h1
    # Work in the orientation where the q=0 branch has the higher
    # threshold; the mirrored case swaps the roles of lam/gamma and of
    # the two age-1 masses in the linear system.
    if swapped:
        lo, hi = gam, lam
        h, hh = h0, h1
    else:
        lo, hi = lam, gam
        h, hh = h1, h0
    phi = x ** (h - 1) / s
    # mass coefficient of the boundary state on the still-idle branch
    cb = (phi * lo + hi / s, -phi * hi + hi / s)
    one_lo = 1.0 - lo
    if hh <= dm:
        mgap = hh - h
        sgeo = (1.0 - one_lo**mgap) / lo
        r1 = (h + sgeo * cb[0], h + sgeo * cb[1])
        decay = x * one_lo**mgap
        r2 = (decay * cb[0] + hi, decay * cb[1] + hi)
    else:
        sgeo = 1.0 / lo
        r1 = (h + sgeo * cb[0], h + sgeo * cb[1])
        r2 = (hi, hi)
    tag = _case_tag_of(dm, h0, h1)
    if swapped:
        # unknowns are (mu_{1,1}, mu_{1,0}) in the mirrored system
        m11, m10 = _solve_2x2(r1, (1.0 - r2[0], -r2[1]), (1.0, 0.0), tag)
    else:
        m10, m11 = _solve_2x2(r1, (1.0 - r2[0], -r2[1]), (1.0, 0.0), tag)
    a = m10 + m11
    total = m10 + m11
    w = (-lam * m10 + gam * m11) / s

    def ramp(k: int) -> float:
        # sum_{D=1..k} D x^(D-1), closed form
        return (1.0 - (k + 1) * x**k + k * x ** (k + 1)) / (s * s)

    if not swapped:
        mu_h = cb[0] * m10 + cb[1] * m11  # mu_{H,0}
        if hh <= dm:
            mgap = hh - h
            t12 = ramp(h) * w + (h * (h + 1) / 2.0) * lam * total / s
            t3 = (
                h
                - (hh + 1) * (1 - lam) ** mgap
                + (1.0 - (1 - lam) ** (mgap + 1)) / lam
            ) * mu_h
        elif h < dm:
            t12 = ramp(h) * w + (h * (h + 1) / 2.0) * lam * total / s
            t3 = (h + (1.0 - (1 - lam) ** (dm - h)) / lam) * mu_h
        else:
            t12 = ramp(dm - 1) * w + (dm * (dm - 1) / 2.0) * lam * total / s
            t3 = dm * total
        return t12 + t3, a, (m10, m11)

    mu_h = cb[0] * m11 + cb[1] * m10  # mu_{H,1} in the mirrored system
    if hh <= dm:
        mgap = hh - h
        t12 = ramp(h) * w + (h * (h + 1) / 2.0) * lam * total / s
        t3 = (
            h * (1 - gam) / gam
            - (hh + 1) * (1 - gam) ** (mgap + 1) / gam
            + (1 - gam) * (1.0 - (1 - gam) ** (mgap + 1)) / gam**2
        ) * mu_h
    elif h < dm:
        t12 = ramp(h) * w + (h * (h + 1) / 2.0) * lam * total / s
        t3 = (
            h * (1 - gam) / gam
            + (1 - gam) * (1.0 - (1 - gam) ** (dm - h)) / gam**2
        ) * mu_h
    else:
        t12 = ramp(dm - 1) * w + (dm * (dm - 1) / 2.0) * lam * total / s
        t3 = dm / gam * mu_h
    return t12 + t3, a, (m10, m11)


def _error_free_j_a(
    params: SubMdpParams, h0: int, h1: int
) -> Tuple[float, float, Tuple[float, float]]:
    return _ef_closed(params.lam, params.gamma, params.d_max, h0, h1)


def policy_j_a(params: SubMdpParams, policy: ThresholdPolicy) -> Tuple[float, float]:
    """Expected average query-age and scheduling rate of a threshold
    policy, by the closed/analytical route appropriate for the channel."""
    _check_policy(params, policy)
    if policy.never_schedules(params.d_max):
        return _never_schedule_j_a(params)
    if params.p == 1.0:
        j, a, _ = _error_free_j_a(params, policy.h0, policy.h1)
        return j, a
    j, a, _, _ = _error_prone_terms(params, policy.h0, policy.h1)
    return j, a


def policy_j_a_hp(params: SubMdpParams, policy: ThresholdPolicy, dps: int = 60):
    """Same quantities evaluated in high-precision arithmetic; used where
    float differences between neighbouring policies fall below round-off.
    Returns mpmath scalars so callers can difference them exactly."""
    import mpmath

    _check_policy(params, policy)
    with mpmath.workdps(dps):
        lam = mpmath.mpf(params.lam)
        gam = mpmath.mpf(params.gamma)
        p = mpmath.mpf(params.p)
        dm = params.d_max
        if policy.never_schedules(dm):
            return dm * lam / (lam + gam), mpmath.mpf(0)
        if params.p == 1.0:
            j, a, _ = _ef_closed(lam, gam, dm, policy.h0, policy.h1)
            return j, a
        j, a, _, _ = _compute_terms(lam, gam, p, dm, policy.h0, policy.h1)
        return j, a


def _clamp_mu(raw: Dict[State, float], tag: str) -> StateDistribution:
    mu: StateDistribution = {}
    for s, v in raw.items():
        if v < -_NEG_TOL:
            raise NumericalError(
                f"negative stationary probability {v} at {s} (case {tag})"
            )
        mu[s] = max(v, 0.0)
    total = sum(mu.values())
    if abs(total - 1.0) > 1e-9:
        raise NumericalError(f"stationary mass {total} != 1 (case {tag})")
    return mu


def stationary_distribution(
    params: SubMdpParams, policy: ThresholdPolicy
) -> PolicyAverages:
    """Stationary table plus (J, A) for one threshold policy.

    Solves the 2-variable age-1 system, then rebuilds every age level by
    block propagation.  The never-schedule policy concentrates all mass
    at the age cap with the query chain's stationary split.
    """
    _check_policy(params, policy)
    dm = params.d_max
    tag = _case_tag(params, policy)
    raw: Dict[State, float] = {s: 0.0 for s in enumerate_states(dm)}
    if policy.never_schedules(dm):
        raw[State(dm, 0)] = 1.0 - params.query_on_rate
        raw[State(dm, 1)] = params.query_on_rate
        j, a = _never_schedule_j_a(params)
        return PolicyAverages(j=j, a=a, mu=_clamp_mu(raw, tag))
    if params.p == 1.0:
        j, a, mu1 = _error_free_j_a(params, policy.h0, policy.h1)
        _, _, _, maps = _error_prone_terms(
            params, policy.h0, policy.h1, keep_maps=True
        )
    else:
        j, a, mu1, maps = _error_prone_terms(
            params, policy.h0, policy.h1, keep_maps=True
        )
    for d in range(1, dm + 1):
        m = maps[d - 1]
        raw[State(d, 0)] = m[0] * mu1[0] + m[1] * mu1[1]
        raw[State(d, 1)] = m[2] * mu1[0] + m[3] * mu1[1]
    return PolicyAverages(j=j, a=a, mu=_clamp_mu(raw, tag))


def zeta(
    params: SubMdpParams, pi1: ThresholdPolicy, pi2: ThresholdPolicy
) -> float:
    """Trade-off ratio (J difference over opposite A difference) between
    two threshold policies; this is the quantity whose level sets give
    the distinct index values."""
    j1, a1 = policy_j_a(params, pi1)
    j2, a2 = policy_j_a(params, pi2)
    denom = a2 - a1
    if abs(denom) < 1e-14:
        raise NumericalError(
            f"equal active times ({a1} vs {a2}): trade-off ratio undefined"
        )
    return (j1 - j2) / denom


def stationary_oracle(
    params: SubMdpParams, policy: ThresholdPolicy, tol: float = 1e-13,
    max_iter: int = 10**6,
) -> PolicyAverages:
    """Independent verification path: power-iterate the exact one-step
    kernel to its stationary distribution and sum J and A directly.

    Iterates the half-lazy kernel (I + P)/2, which has the same
    stationary vector and converges even for the periodic chains that
    error-free thresholds induce.
    """
    _check_policy(params, policy)
    kernel = policy_kernel(params, policy).T  # columns = source states
    n = params.n_states
    v = np.full(n, 1.0 / n)
    for it in range(max_iter):
        nxt = 0.5 * (v + kernel @ v)
        delta = np.max(np.abs(nxt - v))
        v = nxt
        if delta < tol:
            break
    else:
        raise NumericalError("stationary power iteration did not converge")
    v /= v.sum()
    mu: StateDistribution = {}
    j = 0.0
    a = 0.0
    for s in enumerate_states(params.d_max):
        prob = float(v[state_index(s, params.d_max)])
        mu[s] = prob
        if s.query == 1:
            j += s.age * prob
        if policy_action(policy, s) == ACTIVE:
            a += prob
    return PolicyAverages(j=j, a=a, mu=mu)
