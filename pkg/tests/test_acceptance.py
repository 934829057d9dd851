"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run pytest with -s to see them on success)."""

import statistics
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from qaoi_whittle.submdp import (
    SubMdpParams,
    ThresholdPolicy,
    enumerate_states,
)
from qaoi_whittle.dp import (
    discounted_value_iteration,
    extract_thresholds,
    oracle_whittle_index,
    relative_value_iteration,
    solve_joint_mdp,
)
from qaoi_whittle.steady_state import (
    policy_j_a,
    stationary_distribution,
    stationary_oracle,
)
from qaoi_whittle.whittle import (
    compute_whittle_table,
    compute_whittle_table_error_free,
)
from qaoi_whittle.sim import NetworkConfig, lower_bound, run_experiment
from conftest import random_params, random_policy

GAMMA_CYCLE = [0.01, 0.05, 0.2, 0.45, 0.8]
LAMBDA_GRID = [round(0.1 * k, 1) for k in range(1, 10)]


def _report(num: int, name: str, ok: bool, detail: str) -> bool:
    print(f"ACCEPTANCE {num:02d} {name}: {'PASS' if ok else 'FAIL'} ({detail})", flush=True)
    return ok


def test_criterion_01_index_oracle_equivalence():
    t0 = time.time()
    worst = 0.0
    worst_at = None
    count = 0
    for lam in (0.2, 0.5, 0.8):
        for gam in (0.2, 0.5, 0.8):
            for p in (0.3, 0.7, 0.99):
                for dm in (10, 20, 30):
                    params = SubMdpParams(lam, gam, p, dm)
                    tab = compute_whittle_table(params)
                    count += 1
                    for s in enumerate_states(dm):
                        ref = oracle_whittle_index(params, s, tol=1e-8)
                        rel = abs(tab.index_of(s) - ref) / max(abs(ref), 1e-12)
                        if rel > worst:
                            worst, worst_at = rel, (params, s)
    ok = worst < 1e-5
    _report(
        1, "index-oracle equivalence", ok,
        f"{count} instances, worst rel dev {worst:.2e} at {worst_at}, "
        f"{time.time() - t0:.0f}s",
    )
    assert ok


def test_criterion_02_stationary_formula_correctness():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    worst = 0.0

    def check(params, policy):
        nonlocal worst
        got = stationary_distribution(params, policy)
        ref = stationary_oracle(params, policy)
        dev = max(abs(got.mu[s] - ref.mu[s]) for s in got.mu)
        dev = max(dev, abs(got.j - ref.j), abs(got.a - ref.a))
        worst = max(worst, dev)

    for _ in range(200):
        params = random_params(rng, d_max_range=(2, 25))
        check(params, random_policy(rng, params.d_max))
    for _ in range(100):
        params = random_params(rng, d_max_range=(2, 25), p_one=True)
        check(params, random_policy(rng, params.d_max))
    ok = worst < 1e-9
    _report(
        2, "stationary-formula correctness", ok,
        f"300 draws, worst entry/J/A deviation {worst:.2e}, {time.time() - t0:.0f}s",
    )
    assert ok


def test_criterion_03_fig5_state_association():
    t0 = time.time()
    tab = compute_whittle_table(SubMdpParams(0.5, 0.7, 0.7, 50))
    expected = [(7, 0), (10, 1), (8, 0), (11, 1), (9, 0), (12, 1)]
    got = [[(s.age, s.query) for s in tab.groups[w]] for w in range(15, 21)]
    ok = got == [[pair] for pair in expected]
    _report(
        3, "level-16..21 state association", ok,
        f"got {got}, {time.time() - t0:.1f}s",
    )
    assert ok


def _passive_set(params, c):
    sol = relative_value_iteration(params, c)
    return frozenset(int(i) for i in np.nonzero(sol.policy == 0)[0])


def test_criterion_04_indexability_sweep():
    t0 = time.time()
    params = SubMdpParams(0.4, 0.3, 0.7, 50)
    cmax = compute_whittle_table(params).levels[-1]
    grid = [cmax * i / 200 for i in range(201)]
    ok = True
    detail = ""
    prev = frozenset()
    for c in grid:
        cur = _passive_set(params, c)
        if not prev <= cur:
            ok, detail = False, f"passive set shrank at C={c}"
            break
        prev = cur
    if ok and _passive_set(params, 0.0):
        ok, detail = False, "passive set non-empty at C=0"
    if ok and len(_passive_set(params, cmax + 1.0)) != params.n_states:
        ok, detail = False, "passive set not full at grid end + 1"
    _report(
        4, "passive-set monotone sweep", ok,
        detail or f"201 grid points, {time.time() - t0:.0f}s",
    )
    assert ok


def test_criterion_05_equal_thresholds_sweep():
    t0 = time.time()
    params = SubMdpParams(0.4, 0.6, 0.7, 50)
    cmax = compute_whittle_table(params).levels[-1]
    ok = True
    detail = ""
    for i in range(201):
        c = cmax * i / 200
        tp = extract_thresholds(relative_value_iteration(params, c).policy)
        if tp.h0 != tp.h1:
            ok, detail = False, f"h0={tp.h0} != h1={tp.h1} at C={c}"
            break
    _report(
        5, "equal thresholds under one-step mixing", ok,
        detail or f"201 grid points, {time.time() - t0:.0f}s",
    )
    assert ok


def test_criterion_06_never_schedule_closed_form():
    t0 = time.time()
    worst = 0.0
    for lam in (0.1, 0.3, 0.5, 0.7, 0.9):
        for gam in (0.2, 0.5, 0.8):
            for p in (0.3, 0.8, 1.0):
                for dm in (5, 20, 60):
                    params = SubMdpParams(lam, gam, p, dm)
                    never = ThresholdPolicy(dm + 1, dm + 1)
                    j, a = policy_j_a(params, never)
                    worst = max(
                        worst,
                        abs(j - dm * lam / (lam + gam)),
                        abs(a),
                    )
    ok = worst < 1e-12
    _report(
        6, "never-schedule closed form", ok,
        f"135 parameter points, worst |dev| {worst:.2e}, {time.time() - t0:.1f}s",
    )
    assert ok


def _fig6_point(lam):
    arms = tuple(
        SubMdpParams(lam, GAMMA_CYCLE[i % 5], 0.8, 50) for i in range(50)
    )
    common = dict(
        arms=arms, channels=5, horizon=400, runs=10_000,
        seed=31_000 + int(round(lam * 10)), burn_in=100,
    )
    out = {}
    for pol in ("whittle", "discounted", "greedy", "aoi"):
        rep = run_experiment(NetworkConfig(scheduler=pol, **common))
        out[pol] = (rep.esqaoi, rep.stderr)
    out["bound"] = lower_bound(NetworkConfig(scheduler="whittle", **common))
    return lam, out


def test_criterion_07_fig6_reproduction():
    t0 = time.time()
    with ProcessPoolExecutor(max_workers=2) as pool:
        points = dict(pool.map(_fig6_point, LAMBDA_GRID))
    failures = []
    ratios = []
    for lam in LAMBDA_GRID:
        res = points[lam]
        w, sw = res["whittle"]
        d, sd = res["discounted"]
        g, sg = res["greedy"]
        a, sa = res["aoi"]
        bound = res["bound"]
        if w > g + 3 * (sw + sg):
            failures.append(f"lam={lam}: whittle {w:.4f} > greedy {g:.4f}")
        if w > a + 3 * (sw + sa):
            failures.append(f"lam={lam}: whittle {w:.4f} > aoi {a:.4f}")
        if abs(w - d) > 3 * (sw + sd):
            failures.append(
                f"lam={lam}: |whittle-discounted| {abs(w - d):.4f} "
                f"> 3SE {3 * (sw + sd):.4f}"
            )
        if bound > w + 3 * sw:
            failures.append(f"lam={lam}: bound {bound:.4f} above whittle {w:.4f}")
        if w > 1.10 * bound:
            failures.append(
                f"lam={lam}: whittle {w:.4f} beyond 110% of bound {bound:.4f}"
            )
        ratios.append(w / bound)
    ok = not failures
    _report(
        7, "Fig-6 reproduction (reduced Monte-Carlo)", ok,
        ("; ".join(failures) if failures else
         f"9 lambda points, whittle/bound in "
         f"[{min(ratios):.3f}, {max(ratios):.3f}], {time.time() - t0:.0f}s"),
    )
    assert ok


def test_criterion_08_tiny_instance_optimality():
    t0 = time.time()
    draws = [
        (SubMdpParams(0.4, 0.3, 0.8, 8), SubMdpParams(0.6, 0.2, 0.5, 8)),
        (SubMdpParams(0.3, 0.7, 0.95, 8), SubMdpParams(0.7, 0.4, 0.6, 8)),
        (SubMdpParams(0.25, 0.55, 0.7, 8), SubMdpParams(0.5, 0.15, 0.9, 8)),
    ]
    failures = []
    gaps = []
    for i, (a1, a2) in enumerate(draws):
        opt = solve_joint_mdp([a1, a2], 1, 1e-9).gain / 2
        cfg = NetworkConfig(
            arms=(a1, a2), channels=1, horizon=8000, runs=32,
            seed=500 + i, scheduler="whittle", burn_in=800,
        )
        rep = run_experiment(cfg)
        gap = abs(rep.esqaoi - opt) / opt
        gaps.append(gap)
        if abs(rep.esqaoi - opt) > 0.05 * opt + 3 * rep.stderr:
            failures.append(
                f"draw {i}: whittle {rep.esqaoi:.4f} vs optimal {opt:.4f}"
            )
    ok = not failures
    _report(
        8, "tiny-instance optimality gap", ok,
        ("; ".join(failures) if failures else
         f"3 draws, gaps {[f'{g:.3%}' for g in gaps]}, {time.time() - t0:.0f}s"),
    )
    assert ok


def _median_time(fn, reps=3):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def test_criterion_09_complexity_scaling():
    t0 = time.time()
    t_ep = [
        _median_time(lambda d=d: compute_whittle_table(SubMdpParams(0.4, 0.3, 0.7, d)))
        for d in (200, 400)
    ]
    t_ef = [
        _median_time(
            lambda d=d: compute_whittle_table_error_free(SubMdpParams(0.4, 0.3, 1.0, d))
        )
        for d in (200, 400)
    ]
    r_ep = t_ep[1] / t_ep[0]
    r_ef = t_ef[1] / t_ef[0]
    ok = r_ep <= 5.0 and r_ef <= 3.0
    _report(
        9, "doubling-cost scaling", ok,
        f"error-prone {t_ep[0]:.2f}s->{t_ep[1]:.2f}s ratio {r_ep:.2f} (<=5); "
        f"error-free {t_ef[0]:.3f}s->{t_ef[1]:.3f}s ratio {r_ef:.2f} (<=3); "
        f"{time.time() - t0:.0f}s",
    )
    assert ok


def test_criterion_10_vanishing_discount():
    t0 = time.time()
    draws = [
        (SubMdpParams(0.4, 0.3, 0.7, 8), 2.0),
        (SubMdpParams(0.6, 0.5, 0.9, 10), 1.0),
        (SubMdpParams(0.25, 0.7, 0.5, 6), 4.0),
    ]
    ok = True
    detail = []
    for params, c in draws:
        gain = relative_value_iteration(params, c).gain
        gaps = {}
        for beta in (0.9, 0.99, 0.999):
            vt = discounted_value_iteration(params, c, beta, 1e-7)
            gaps[beta] = np.abs((1 - beta) * vt.values - gain)
        if not (
            np.all(gaps[0.999] < gaps[0.99]) and np.all(gaps[0.99] < gaps[0.9])
        ):
            ok = False
            detail.append(f"no per-state contraction for {params}")
        detail.append(f"max gap at 0.999: {gaps[0.999].max():.2e}")
    _report(
        10, "vanishing-discount convergence", ok,
        "; ".join(detail) + f", {time.time() - t0:.0f}s",
    )
    assert ok
