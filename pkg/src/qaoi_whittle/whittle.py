"""Index tables for one arm: the efficient steady-state recursion, its
error-free specialisation, the query-blind age-only baseline, and a
discounted-reward approximation used as a comparison policy.

The main algorithm walks the threshold lattice upward from the
schedule-everywhere policy.  At each step it finds, per query branch,
the nearest larger threshold that changes the long-run scheduling rate,
prices the move by the ratio of the query-age increase to the
scheduling-rate decrease, and takes the cheaper branch (both on a tie,
and always both when the query chain mixes in one step).  Every state a
move turns passive receives the move's price as its index.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import mpmath
import numpy as np

from .errors import DomainError, StructuralError
from .submdp import State, SubMdpParams, ThresholdPolicy
from . import steady_state
from .submdp import cost_vectors, transition_matrices

# Two one-sided prices within this relative tolerance are treated as the
# same level and both branches advance together.
_TIE_RTOL = 1e-9
# The one-step-mixing shortcut is detected symbolically on the inputs.
_LOCKSTEP_TOL = 1e-12

logger = logging.getLogger(__name__)


# Digits carried when neighbouring policies differ by less than double
# round-off; 60 leaves ~30 digits of headroom past the smallest state
# masses the loop ever needs to resolve.
_HP_DPS = 60
# High-precision rate differences below this are treated as genuinely zero.
_HP_FLOOR = 1e-30
# A float price whose conditioning error exceeds this relative level is
# recomputed in high precision before any comparison uses it.
_PRICE_RTOL = 1e-8


# Distinguishes true scheduling-rate changes from accumulated round-off
# (~1e-15 over one evaluation); rates below this floor are numerically
# indistinguishable, which only happens for states of negligible mass.
def _a_changed(a_ref: float, a_new: float) -> bool:
    return abs(a_new - a_ref) > 1e-13 + 1e-11 * max(abs(a_ref), abs(a_new))


@dataclass
class WhittleTable:
    """Per-state index values of one arm plus their level structure.

    index[q, age-1] holds the index of state (age, q); levels are the
    strictly increasing distinct values; groups[w] lists the states
    priced at levels[w]; trajectory records the threshold pair after
    each level (starting at (1, 1)), which is exactly the family of
    policies that are average-cost optimal between consecutive levels.
    """

    params: SubMdpParams
    index: np.ndarray
    levels: List[float]
    groups: List[List[State]]
    trajectory: Optional[List[Tuple[int, int]]] = None

    def index_of(self, s: State) -> float:
        return float(self.index[s.query, s.age - 1])

    def to_json_dict(self) -> dict:
        return {
            "params": {
                "lambda": self.params.lam,
                "gamma": self.params.gamma,
                "p": self.params.p,
                "d_max": self.params.d_max,
            },
            "levels": list(self.levels),
            "index": [
                [d, q, float(self.index[q, d - 1])]
                for q in (0, 1)
                for d in range(1, self.params.d_max + 1)
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "WhittleTable":
        prm = doc["params"]
        params = SubMdpParams(
            lam=prm["lambda"], gamma=prm["gamma"], p=prm["p"], d_max=prm["d_max"]
        )
        index = np.full((2, params.d_max), np.nan)
        for d, q, val in doc["index"]:
            index[q, d - 1] = val
        levels = [float(v) for v in doc["levels"]]
        groups: List[List[State]] = [[] for _ in levels]
        pos = {lv: i for i, lv in enumerate(levels)}
        for d, q, val in doc["index"]:
            groups[pos[float(val)]].append(State(d, q))
        return cls(params=params, index=index, levels=levels, groups=groups)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        buf.write("D,q,index\n")
        for q in (0, 1):
            for d in range(1, self.params.d_max + 1):
                buf.write(f"{d},{q},{self.index[q, d - 1]!r}\n")
        return buf.getvalue()


def next_threshold(
    params: SubMdpParams, policy: ThresholdPolicy, which: int
) -> int:
    """Smallest threshold strictly above the chosen branch's current one
    whose policy has a different long-run scheduling rate."""
    if which not in (0, 1):
        raise DomainError("branch selector must be 0 or 1")
    current = policy.threshold(which)
    if current >= params.d_max + 1:
        raise DomainError("branch already at the never-schedule sentinel")
    _, a_ref = steady_state.policy_j_a(params, policy)
    for cand in range(current + 1, params.d_max + 2):
        trial = (
            ThresholdPolicy(policy.h0, cand)
            if which
            else ThresholdPolicy(cand, policy.h1)
        )
        _, a_new = steady_state.policy_j_a(params, trial)
        if _a_changed(a_ref, a_new):
            return cand
    raise StructuralError(
        f"no threshold above {current} on branch {which} changes the "
        f"scheduling rate of {policy}"
    )


def _whittle_loop(
    params: SubMdpParams,
    evaluate: Callable[[int, int], Tuple[float, float]],
) -> WhittleTable:
    dm = params.d_max
    lockstep = abs(params.lam + params.gamma - 1.0) < _LOCKSTEP_TOL
    memo: Dict[Tuple[int, int], Tuple[float, float]] = {}
    memo_hp: Dict[Tuple[int, int], Tuple[object, object]] = {}

    def ja(h0: int, h1: int) -> Tuple[float, float]:
        key = (h0, h1)
        if key not in memo:
            memo[key] = evaluate(h0, h1)
        return memo[key]

    def ja_hp(h0: int, h1: int):
        key = (h0, h1)
        if key not in memo_hp:
            memo_hp[key] = steady_state.policy_j_a_hp(
                params, ThresholdPolicy(h0, h1), dps=_HP_DPS
            )
        return memo_hp[key]

    def advance(h0: int, h1: int, which: int) -> Optional[int]:
        # None marks a genuinely stalled branch: every remaining toggle on
        # it sits on states of mass beyond even high-precision resolution.
        a_ref = ja(h0, h1)[1]
        a_ref_hp = None
        lo = h1 if which else h0
        for cand in range(lo + 1, dm + 2):
            trial = (h0, cand) if which else (cand, h1)
            if _a_changed(a_ref, ja(*trial)[1]):
                return cand
            # below float resolution: let high precision decide
            with mpmath.workdps(_HP_DPS):
                if a_ref_hp is None:
                    a_ref_hp = ja_hp(h0, h1)[1]
                if abs(ja_hp(*trial)[1] - a_ref_hp) > _HP_FLOOR:
                    return cand
        return None

    def price(
        base: Tuple[int, int], trial: Tuple[int, int]
    ) -> Tuple[float, float, float]:
        # Trade-off ratio, its conditioning-based error bar, and the rate
        # drop it divides by: J and A carry ~1e-12-relative evaluation
        # error, amplified by 1/|dA| in the ratio.  Ill-conditioned ratios
        # are recomputed with enough digits to make the bar negligible.
        j_b, a_b = ja(*base)
        j_t, a_t = ja(*trial)
        denom = a_b - a_t
        if denom != 0.0:
            val = (j_t - j_b) / denom
            err = 2e-12 * (max(1.0, abs(j_b), abs(j_t)) + abs(val)) / abs(denom)
            if math.isfinite(val) and err <= _PRICE_RTOL * max(1.0, abs(val)):
                return val, err, abs(denom)
        with mpmath.workdps(_HP_DPS):
            jb, ab = ja_hp(*base)
            jt, at = ja_hp(*trial)
            d = ab - at
            if abs(d) < _HP_FLOOR:
                raise StructuralError(
                    f"price undefined between {base} and {trial}: equal rates"
                )
            val = float((jt - jb) / d)
            da = float(abs(d))
        return val, abs(val) * 1e-13 + 1e-16, da

    index = np.full((2, dm), np.nan)
    levels: List[float] = []
    level_errs: List[float] = []
    groups: List[List[State]] = []
    trajectory: List[Tuple[int, int]] = [(1, 1)]
    h0 = h1 = 1
    while (h0, h1) != (dm + 1, dm + 1):
        fallback = False
        if h0 == dm + 1:
            nb1 = advance(h0, h1, 1)
            if nb1 is None:
                fallback = True
            else:
                c, cerr, cda = price((h0, h1), (h0, nb1))
                group = [State(d, 1) for d in range(h1, nb1)]
                nxt = (h0, nb1)
        elif h1 == dm + 1:
            nb0 = advance(h0, h1, 0)
            if nb0 is None:
                fallback = True
            else:
                c, cerr, cda = price((h0, h1), (nb0, h1))
                group = [State(d, 0) for d in range(h0, nb0)]
                nxt = (nb0, h1)
        elif lockstep:
            nb0 = advance(h0, h1, 0)
            nb1 = advance(h0, h1, 1)
            if nb0 is None or nb1 is None:
                fallback = True
            else:
                c, cerr, cda = price((h0, h1), (nb0, nb1))
                group = [State(d, 0) for d in range(h0, nb0)] + [
                    State(d, 1) for d in range(h1, nb1)
                ]
                nxt = (nb0, nb1)
        else:
            nb0 = advance(h0, h1, 0)
            nb1 = advance(h0, h1, 1)
            if nb0 is None and nb1 is None:
                fallback = True
            elif nb0 is None:
                c, cerr, cda = price((h0, h1), (h0, nb1))
                group = [State(d, 1) for d in range(h1, nb1)]
                nxt = (h0, nb1)
            elif nb1 is None:
                c, cerr, cda = price((h0, h1), (nb0, h1))
                group = [State(d, 0) for d in range(h0, nb0)]
                nxt = (nb0, h1)
            else:
                z0, e0, da0 = price((h0, h1), (nb0, h1))
                z1, e1, da1 = price((h0, h1), (h0, nb1))
                if abs(z0 - z1) <= e0 + e1 + _TIE_RTOL * max(abs(z0), abs(z1)):
                    logger.info(
                        "equal one-sided prices %.17g at (%d, %d) without "
                        "one-step query mixing; advancing both branches",
                        z0, h0, h1,
                    )
                    c, cerr, cda = min(z0, z1), max(e0, e1), min(da0, da1)
                    group = [State(d, 0) for d in range(h0, nb0)] + [
                        State(d, 1) for d in range(h1, nb1)
                    ]
                    nxt = (nb0, nb1)
                elif z0 < z1:
                    c, cerr, cda = z0, e0, da0
                    group = [State(d, 0) for d in range(h0, nb0)]
                    nxt = (nb0, h1)
                else:
                    c, cerr, cda = z1, e1, da1
                    group = [State(d, 1) for d in range(h1, nb1)]
                    nxt = (h0, nb1)
        if fallback:
            # Every remaining toggle sits on states whose stationary mass
            # is below float resolution, so no stepwise price exists.
            # Price the whole residual block by the jump to never-schedule
            # (its rate drop is the full current scheduling rate), which is
            # the merged-group price of that one move.
            group = [State(d, 0) for d in range(h0, dm + 1)] + [
                State(d, 1) for d in range(h1, dm + 1)
            ]
            nxt = (dm + 1, dm + 1)
            j_cur, a_cur = ja(h0, h1)
            j_end, a_end = ja(dm + 1, dm + 1)
            prev = levels[-1] if levels else 0.0
            if a_cur - a_end > 1e-13:
                c = (j_end - j_cur) / (a_cur - a_end)
            else:
                c = prev + 1.0
            if not math.isfinite(c) or c <= prev:
                c = prev * (1.0 + 1e-9) + 1e-12
            cerr = abs(c) * 1e-9
            cda = 0.0
            logger.warning(
                "pricing %d residual states of negligible mass at %.17g "
                "via the never-schedule jump (thresholds (%d, %d))",
                len(group), c, h0, h1,
            )
        if not math.isfinite(c) or c <= 0.0:
            raise StructuralError(
                f"non-positive index level {c} at thresholds ({h0}, {h1})"
            )
        if levels and c <= levels[-1]:
            noise = level_errs[-1] + cerr + _TIE_RTOL * max(1.0, abs(levels[-1]))
            if c < levels[-1] - noise:
                if cda > 1e-16:
                    raise StructuralError(
                        "index levels stopped increasing: "
                        f"{c} after {levels[-1]}; trajectory={trajectory}"
                    )
                # The move toggles states whose scheduling-rate effect is
                # below resolution; at that mass the average-cost ranking
                # of neighbouring policies degenerates and its stepwise
                # prices stop being ordered.  Pin such states to the
                # previous level rather than emit a decreasing one.
                logger.warning(
                    "clamping level %.17g (rate drop %.3g) to %.17g at "
                    "thresholds (%d, %d): vanishing-mass toggle",
                    c, cda, levels[-1], h0, h1,
                )
            else:
                # numerically coincident with the previous level
                logger.info(
                    "merging level %.17g into %.17g at thresholds (%d, %d)",
                    c, levels[-1], h0, h1,
                )
            c = levels[-1]
            level_errs[-1] = max(level_errs[-1], cerr)
            groups[-1].extend(group)
        else:
            levels.append(c)
            level_errs.append(cerr)
            groups.append(group)
        for s in group:
            index[s.query, s.age - 1] = c
        h0, h1 = nxt
        trajectory.append((h0, h1))
    if np.isnan(index).any():
        raise StructuralError("index table left unassigned states")
    return WhittleTable(
        params=params,
        index=index,
        levels=levels,
        groups=groups,
        trajectory=trajectory,
    )


def compute_whittle_table(params: SubMdpParams) -> WhittleTable:
    """Index table for an error-prone channel (p < 1) via the adaptive
    threshold recursion over analytical steady-state evaluations."""
    if params.p >= 1.0:
        raise DomainError(
            "error-prone recursion requires p < 1; use the error-free table"
        )

    def evaluate(h0: int, h1: int) -> Tuple[float, float]:
        return steady_state.policy_j_a(params, ThresholdPolicy(h0, h1))

    return _whittle_loop(params, evaluate)


def compute_whittle_table_error_free(params: SubMdpParams) -> WhittleTable:
    """Index table for an error-free channel (p = 1); the same recursion
    over the constant-time closed-form policy evaluations."""
    if params.p != 1.0:
        raise DomainError("error-free table requires p = 1")

    def evaluate(h0: int, h1: int) -> Tuple[float, float]:
        return steady_state.policy_j_a(params, ThresholdPolicy(h0, h1))

    return _whittle_loop(params, evaluate)


def whittle_table(params: SubMdpParams) -> WhittleTable:
    """Dispatch on the channel: error-free closed forms at p = 1, the
    generic recursion otherwise."""
    if params.p == 1.0:
        return compute_whittle_table_error_free(params)
    return compute_whittle_table(params)


def _aoi_j_a(params: SubMdpParams, h: int) -> Tuple[float, float]:
    """Average age and scheduling rate of the age-only chain (a query
    every slot) under threshold h."""
    dm, p = params.d_max, params.p
    if h == dm + 1:
        return float(dm), 0.0
    # weights relative to the age-1 mass; the cap aggregates the tail
    norm = 0.0
    jsum = 0.0
    for d in range(1, dm):
        w = 1.0 if d <= h else (1.0 - p) ** (d - h)
        norm += w
        jsum += d * w
    w_cap = (1.0 - p) ** max(dm - h, 0) / p
    norm += w_cap
    jsum += dm * w_cap
    mu1 = 1.0 / norm
    return jsum * mu1, mu1 / p


def aoi_whittle_table(params: SubMdpParams) -> np.ndarray:
    """Index per age of the query-blind arm in which every slot charges
    the age: the same price recursion specialised to one branch.  The
    result depends only on p and d_max."""
    dm = params.d_max
    idx = np.empty(dm)
    j_cur, a_cur = _aoi_j_a(params, 1)
    for d in range(1, dm + 1):
        j_next, a_next = _aoi_j_a(params, d + 1)
        denom = a_cur - a_next
        if denom <= 1e-15:
            raise StructuralError(
                f"age-only chain scheduling rate did not drop at age {d}"
            )
        idx[d - 1] = (j_next - j_cur) / denom
        j_cur, a_cur = j_next, a_next
    # The age cap aggregates the tail, which prices the top two ages
    # identically; below the cap the levels are strictly separated.
    noise = _TIE_RTOL * max(1.0, float(np.abs(idx).max()))
    if np.any(np.diff(idx) < -noise):
        raise StructuralError("age-only indices decreased along the ages")
    return idx


def discounted_index_table(
    params: SubMdpParams, beta: float = 0.99, tol: float = 1e-6
) -> WhittleTable:
    """Discounted-reward index approximation: for every state, the
    scheduling cost at which it turns passive under the discounted
    optimal policy, located by bisection with probes shared across
    states.  Used as the comparison scheduling policy.

    Each probe is solved by policy iteration (exact linear-solve
    evaluation), which reaches the same fixed point as value iteration
    in a handful of sweeps.
    """
    if not (0.0 < beta < 1.0):
        raise DomainError("beta must lie in (0,1)")
    if tol <= 0:
        raise DomainError("tol must be positive")
    p0, p1 = transition_matrices(params)
    n = params.n_states
    eye = np.eye(n)

    def solve(c: float, warm: np.ndarray) -> np.ndarray:
        c0, c1 = cost_vectors(params, c)
        pol = warm
        for _ in range(200):
            p_pi = np.where(pol[:, None] == 1, p1, p0)
            c_pi = np.where(pol == 1, c1, c0)
            v = np.linalg.solve(eye - beta * p_pi, c_pi)
            q0 = c0 + beta * (p0 @ v)
            q1 = c1 + beta * (p1 @ v)
            nxt = (q1 < q0).astype(np.int8)
            if np.array_equal(nxt, pol):
                return pol
            pol = nxt
        raise StructuralError("discounted policy iteration did not settle")

    pol0 = solve(0.0, np.ones(n, dtype=np.int8))
    if not pol0.all():
        raise StructuralError("some state is passive at zero cost")
    hi = 1.0
    pol_hi = solve(hi, pol0)
    while pol_hi.any():
        hi *= 2.0
        if hi > 2.0**40:
            raise StructuralError("no finite passivity point under discounting")
        pol_hi = solve(hi, pol_hi)

    out = np.empty(n)

    def refine(lo: float, hi_: float, members: np.ndarray, warm: np.ndarray):
        if hi_ - lo < tol:
            out[members] = 0.5 * (lo + hi_)
            return
        mid = 0.5 * (lo + hi_)
        pol = solve(mid, warm)
        passive = members[pol[members] == 0]
        active = members[pol[members] == 1]
        if passive.size:
            refine(lo, mid, passive, pol)
        if active.size:
            refine(mid, hi_, active, pol)

    refine(0.0, hi, np.arange(n), pol0)
    index = out.reshape(2, params.d_max).copy()
    levels = sorted(set(float(v) for v in out))
    groups: List[List[State]] = [[] for _ in levels]
    pos = {lv: i for i, lv in enumerate(levels)}
    for q in (0, 1):
        for d in range(1, params.d_max + 1):
            groups[pos[float(index[q, d - 1])]].append(State(d, q))
    return WhittleTable(
        params=params, index=index, levels=levels, groups=groups, trajectory=None
    )
