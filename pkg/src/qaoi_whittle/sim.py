"""N-node uplink simulator with pluggable schedulers and the relaxation
lower bound.

Episodes run chunk-vectorised: state arrays hold one row per episode and
one column per arm, and each slot performs the schedule / charge /
transition cycle with numpy operations.  A master seed deterministically
derives one counter-based stream per episode chunk, so identical
configurations reproduce bit-identical reports regardless of how many
chunks the run is split into.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, DomainError
from .submdp import Action, State, SubMdpParams
from .whittle import (
    WhittleTable,
    aoi_whittle_table,
    discounted_index_table,
    whittle_table,
)
from . import dp
from . import steady_state
from .submdp import ThresholdPolicy

SCHEDULERS = ("whittle", "discounted", "greedy", "aoi", "random", "optimal", "threshold")

_CHUNK = 4096

# Index tables and joint solutions are pure functions of their inputs;
# cache them per process so sweeps do not recompute per point.
_table_cache: Dict[tuple, object] = {}


@dataclass(frozen=True)
class NetworkConfig:
    """One experiment: arms, channel budget, horizon, Monte-Carlo size,
    seeding, and the scheduling policy with its options."""

    arms: Tuple[SubMdpParams, ...]
    channels: int
    horizon: int
    runs: int
    seed: int
    scheduler: str = "whittle"
    beta: float = 0.99
    burn_in: int = 0
    random_rate: float = 1.0
    thresholds: Optional[Tuple[Tuple[int, int], ...]] = None
    joint_cap: int = 10**6

    def __post_init__(self) -> None:
        n = len(self.arms)
        if n < 2:
            raise DomainError("need at least 2 arms")
        if not (0 < self.channels < n):
            raise DomainError(
                f"channel count must satisfy 0 < M < N, got M={self.channels}, N={n}"
            )
        if self.horizon < 1:
            raise DomainError("horizon must be >= 1")
        if self.runs < 1:
            raise DomainError("runs must be >= 1")
        if not (0 <= self.burn_in < self.horizon):
            raise DomainError("burn_in must lie in [0, horizon)")
        if self.scheduler not in SCHEDULERS:
            raise DomainError(f"unknown scheduler {self.scheduler!r}")
        if not (0.0 <= self.random_rate <= 1.0):
            raise DomainError("random_rate must lie in [0,1]")
        if self.scheduler == "threshold":
            if self.thresholds is None or len(self.thresholds) != n:
                raise DomainError("threshold scheduler needs per-arm thresholds")

    @property
    def n_arms(self) -> int:
        return len(self.arms)


@dataclass
class NetworkState:
    """Joint state: one (age, query) pair per arm plus the slot counter."""

    arm_states: Tuple[State, ...]
    slot: int = 1


@dataclass
class SimulationReport:
    """Monte-Carlo estimate of the per-node per-slot expected query-age."""

    esqaoi: float
    stderr: float
    per_arm_qaoi: List[float]
    schedule_rate: List[float]


def step(
    config: NetworkConfig,
    state: NetworkState,
    actions: Sequence[Action],
    rng: np.random.Generator,
) -> NetworkState:
    """One slot transition: scheduled arms reset their age on channel
    success, every age otherwise increments (clamped), and query flags
    evolve independently.  The channel budget is a hard contract."""
    if len(actions) != config.n_arms:
        raise ContractError("one action per arm required")
    if sum(int(a) for a in actions) > config.channels:
        raise ContractError(
            f"budget violated: {sum(map(int, actions))} > {config.channels}"
        )
    new_states = []
    for params, s, a in zip(config.arms, state.arm_states, actions):
        success = a == 1 and rng.random() < params.p
        age = 1 if success else min(s.age + 1, params.d_max)
        flip = rng.random()
        if s.query == 1:
            query = 0 if flip < params.gamma else 1
        else:
            query = 1 if flip < params.lam else 0
        new_states.append(State(age, query))
    return NetworkState(arm_states=tuple(new_states), slot=state.slot + 1)


def greedy_rank(config: NetworkConfig, state: NetworkState) -> List[Action]:
    """Schedule the M arms with the largest one-step expected query-age
    reduction D*p*(lam*(1-q) + (1-gamma)*q); ties go to the lowest id."""
    scores = np.array(
        [
            s.age
            * prm.p
            * (prm.lam * (1 - s.query) + (1.0 - prm.gamma) * s.query)
            for prm, s in zip(config.arms, state.arm_states)
        ]
    )
    return _top_m_actions(scores, config.channels)


def whittle_schedule(
    tables: Sequence[WhittleTable], state: NetworkState, m: int
) -> List[Action]:
    """Schedule the m arms whose current states carry the highest index;
    ties go to the lowest arm id."""
    scores = []
    for table, s in zip(tables, state.arm_states):
        if s.age > table.params.d_max:
            raise ContractError(f"no table entry for state {s}")
        val = table.index_of(s)
        if math.isnan(val):
            raise ContractError(f"no table entry for state {s}")
        scores.append(val)
    return _top_m_actions(np.array(scores), m)


def _top_m_actions(scores: np.ndarray, m: int) -> List[Action]:
    order = np.argsort(-scores, kind="stable")
    actions = [0] * scores.shape[0]
    for i in order[:m]:
        actions[int(i)] = 1
    return actions


def _cached_table(kind: str, params: SubMdpParams, beta: float) -> object:
    key = (kind, params, beta)
    if key not in _table_cache:
        if kind == "whittle":
            _table_cache[key] = whittle_table(params)
        elif kind == "discounted":
            _table_cache[key] = discounted_index_table(params, beta=beta)
        elif kind == "aoi":
            _table_cache[key] = aoi_whittle_table(params)
        else:
            raise DomainError(kind)
    return _table_cache[key]


def arm_tables(config: NetworkConfig) -> List[WhittleTable]:
    """Per-arm index tables for the configured index policy."""
    kind = config.scheduler if config.scheduler in ("whittle", "discounted") else "whittle"
    return [_cached_table(kind, prm, config.beta) for prm in config.arms]


def _index_matrix(config: NetworkConfig) -> np.ndarray:
    """(N, 2, max_d) per-arm index lookup for the configured scheduler."""
    n = config.n_arms
    dmax = max(p.d_max for p in config.arms)
    mat = np.full((n, 2, dmax), -np.inf)
    for i, prm in enumerate(config.arms):
        if config.scheduler == "aoi":
            row = _cached_table("aoi", prm, config.beta)
            mat[i, 0, : prm.d_max] = row
            mat[i, 1, : prm.d_max] = row
        else:
            table = _cached_table(config.scheduler, prm, config.beta)
            mat[i, :, : prm.d_max] = table.index
    return mat


def _joint_solution(config: NetworkConfig) -> dp.JointAverageRewardSolution:
    key = ("optimal", config.arms, config.channels)
    if key not in _table_cache:
        _table_cache[key] = dp.solve_joint_mdp(
            config.arms, config.channels, cap=config.joint_cap
        )
    return _table_cache[key]


def run_experiment(config: NetworkConfig) -> SimulationReport:
    """Monte-Carlo estimate of the ESQAoI under the configured policy.

    Episodes start at age 1 with query flags drawn from each chain's
    stationary split; the time average runs over the slots after the
    configured burn-in.
    """
    n, m = config.n_arms, config.channels
    lam = np.array([p.lam for p in config.arms])
    gam = np.array([p.gamma for p in config.arms])
    psucc = np.array([p.p for p in config.arms])
    dmax = np.array([p.d_max for p in config.arms])
    q_on = lam / (lam + gam)

    scheduler = config.scheduler
    index_mat = None
    joint = None
    want_thresholds = None
    if scheduler in ("whittle", "discounted", "aoi"):
        index_mat = _index_matrix(config)
    elif scheduler == "optimal":
        joint = _joint_solution(config)
        action_masks = np.zeros((len(joint.actions), n), dtype=np.int8)
        for k, subset in enumerate(joint.actions):
            for arm in subset:
                action_masks[k, arm] = 1
        radix = np.array([p.n_states for p in config.arms])
        weights = np.ones(n, dtype=np.int64)
        for i in range(n - 2, -1, -1):
            weights[i] = weights[i + 1] * radix[i + 1]
    elif scheduler == "threshold":
        want_thresholds = np.array(config.thresholds)  # (N, 2) as (h0, h1)

    kept = config.horizon - config.burn_in
    episode_vals = np.empty(config.runs)
    arm_qaoi = np.zeros(n)
    arm_sched = np.zeros(n)

    seed_seq = np.random.SeedSequence(config.seed)
    n_chunks = (config.runs + _CHUNK - 1) // _CHUNK
    children = seed_seq.spawn(n_chunks)

    done = 0
    for chunk_id in range(n_chunks):
        e = min(_CHUNK, config.runs - done)
        rng = np.random.Generator(np.random.Philox(children[chunk_id]))
        ages = np.ones((e, n), dtype=np.int64)
        queries = (rng.random((e, n)) < q_on[None, :]).astype(np.int8)
        ep_sum = np.zeros(e)
        for t in range(1, config.horizon + 1):
            if scheduler in ("whittle", "discounted", "aoi"):
                scores = index_mat[np.arange(n)[None, :], queries, ages - 1]
                actions = _top_m_matrix(scores, m)
            elif scheduler == "greedy":
                scores = ages * psucc[None, :] * (
                    lam[None, :] * (1 - queries) + (1.0 - gam[None, :]) * queries
                )
                actions = _top_m_matrix(scores, m)
            elif scheduler == "random":
                keys = rng.random((e, n))
                actions = _top_m_matrix(keys, m)
                if config.random_rate < 1.0:
                    keep = rng.random((e, n)) < config.random_rate
                    actions = actions & keep
            elif scheduler == "optimal":
                flat = (queries.astype(np.int64) * dmax[None, :] + ages - 1)
                joint_idx = flat @ weights
                actions = action_masks[joint.policy[joint_idx]].astype(bool)
            else:  # threshold
                hq = np.where(
                    queries == 1,
                    want_thresholds[None, :, 1],
                    want_thresholds[None, :, 0],
                )
                want = ages >= hq
                order = np.argsort(~want, axis=1, kind="stable")
                actions = np.zeros((e, n), dtype=bool)
                np.put_along_axis(actions, order[:, :m], True, axis=1)
                actions &= want
            if t > config.burn_in:
                qa = ages * queries
                ep_sum += qa.sum(axis=1)
                arm_qaoi += qa.sum(axis=0)
                arm_sched += actions.sum(axis=0)
            success = actions & (rng.random((e, n)) < psucc[None, :])
            ages = np.where(success, 1, np.minimum(ages + 1, dmax[None, :]))
            flips = rng.random((e, n))
            queries = np.where(
                queries == 1,
                (flips >= gam[None, :]).astype(np.int8),
                (flips < lam[None, :]).astype(np.int8),
            )
        episode_vals[done : done + e] = ep_sum / (n * kept)
        done += e

    esqaoi = float(episode_vals.mean())
    stderr = (
        float(episode_vals.std(ddof=1) / math.sqrt(config.runs))
        if config.runs > 1
        else 0.0
    )
    return SimulationReport(
        esqaoi=esqaoi,
        stderr=stderr,
        per_arm_qaoi=list(arm_qaoi / (config.runs * kept)),
        schedule_rate=list(arm_sched / (config.runs * kept)),
    )


def _top_m_matrix(scores: np.ndarray, m: int) -> np.ndarray:
    order = np.argsort(-scores, axis=1, kind="stable")
    actions = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(actions, order[:, :m], True, axis=1)
    return actions


def lower_bound(config: NetworkConfig, tol: float = 1e-6) -> float:
    """Valid lower bound on the achievable ESQAoI from the time-average
    relaxation: maximise the concave dual over the scheduling charge,
    with each arm's inner minimisation running over the finitely many
    threshold policies traced by its index table."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    n, m = config.n_arms, config.channels
    curves: List[List[Tuple[float, float]]] = []
    c_hi = 0.0
    for prm in config.arms:
        table: WhittleTable = _cached_table("whittle", prm, config.beta)
        pts = []
        seen = set()
        for h0, h1 in table.trajectory:
            if (h0, h1) in seen:
                continue
            seen.add((h0, h1))
            pts.append(steady_state.policy_j_a(prm, ThresholdPolicy(h0, h1)))
        curves.append(pts)
        c_hi = max(c_hi, table.levels[-1])

    def dual(c: float) -> float:
        total = 0.0
        for pts in curves:
            total += min(j + c * a for j, a in pts)
        return (total - c * m) / n

    # golden-section maximisation of the concave dual on [0, c_hi]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    lo, hi = 0.0, max(c_hi, tol)
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = dual(x1), dual(x2)
    while hi - lo > tol:
        if f1 >= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = dual(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = dual(x2)
    best = 0.5 * (lo + hi)
    return max(dual(best), dual(0.0))
