import numpy as np
import pytest

from qaoi_whittle.errors import NumericalError
from qaoi_whittle.submdp import State, SubMdpParams, ThresholdPolicy
from qaoi_whittle.steady_state import (
    build_blocks,
    policy_j_a,
    policy_j_a_hp,
    power_p1,
    power_p2,
    power_p3,
    stationary_distribution,
    stationary_oracle,
    zeta,
)
from conftest import random_params, random_policy


def test_block_examples():
    params = SubMdpParams(0.4, 0.3, 0.7, 10)
    blocks = build_blocks(params, ThresholdPolicy(5, 3))
    assert blocks.p1 == pytest.approx(np.array([[0.6, 0.3], [0.4, 0.7]]))
    assert blocks.p1.sum(axis=0) == pytest.approx([1.0, 1.0])
    assert blocks.p3 == pytest.approx(0.3 * blocks.p1)
    same = build_blocks(params, ThresholdPolicy(4, 4))
    assert same.p2 == pytest.approx(np.eye(2))
    never = build_blocks(params, ThresholdPolicy(11, 11))
    assert never.p4 is None
    assert never.case_tag == "never-schedule"


def test_power_p1_closed_form():
    params = SubMdpParams(0.4, 0.3, 0.7, 10)
    assert power_p1(params, 0) == pytest.approx(np.eye(2))
    assert power_p1(params, 1) == pytest.approx(
        build_blocks(params, ThresholdPolicy(1, 1)).p1
    )
    # one-step-mixing chain: every positive power is the stationary map
    mix = SubMdpParams(0.4, 0.6, 0.7, 10)
    for n in (1, 2, 5):
        assert power_p1(mix, n) == pytest.approx(
            np.array([[0.6, 0.6], [0.4, 0.4]])
        )
    # semigroup property and convergence to the stationary columns
    for n, m in [(2, 3), (1, 7), (4, 4)]:
        assert power_p1(params, n + m) == pytest.approx(
            power_p1(params, n) @ power_p1(params, m), abs=1e-12
        )
    s = params.lam + params.gamma
    limit = np.array(
        [[params.gamma / s] * 2, [params.lam / s] * 2]
    )
    assert power_p1(params, 200) == pytest.approx(limit, abs=1e-12)


def test_power_p3():
    params = SubMdpParams(0.4, 0.3, 1.0, 10)
    assert power_p3(params, 0) == pytest.approx(np.eye(2))
    assert power_p3(params, 3) == pytest.approx(np.zeros((2, 2)))
    half = SubMdpParams(0.4, 0.3, 0.5, 10)
    p3 = build_blocks(half, ThresholdPolicy(1, 1)).p3
    assert power_p3(half, 2) == pytest.approx(p3 @ p3, abs=1e-14)
    assert power_p3(half, 2) == pytest.approx(0.25 * power_p1(half, 2))


def test_power_p2():
    params = SubMdpParams(0.4, 0.3, 0.7, 10)
    blocks = build_blocks(params, ThresholdPolicy(6, 3))
    assert power_p2(blocks, 1) == pytest.approx(blocks.p2)
    assert power_p2(blocks, 5) == pytest.approx(
        np.linalg.matrix_power(blocks.p2, 5), abs=1e-14
    )
    same = build_blocks(params, ThresholdPolicy(4, 4))
    for n in (0, 1, 4):
        assert power_p2(same, n) == pytest.approx(np.eye(2))
    # error-free rank-one closed form
    ef = build_blocks(SubMdpParams(0.4, 0.3, 1.0, 10), ThresholdPolicy(6, 3))
    lam = 0.4
    assert power_p2(ef, 3) == pytest.approx(
        np.array([[(1 - lam) ** 3, 0.0], [lam * (1 - lam) ** 2, 0.0]])
    )


def test_never_schedule_closed_form():
    params = SubMdpParams(0.5, 0.5, 0.7, 10)
    pa = stationary_distribution(params, ThresholdPolicy(11, 11))
    assert pa.j == pytest.approx(5.0, abs=1e-14)
    assert pa.a == 0.0
    assert pa.mu[State(10, 1)] == pytest.approx(0.5, abs=1e-14)


def test_always_schedule_error_free():
    params = SubMdpParams(0.4, 0.3, 1.0, 12)
    pa = stationary_distribution(params, ThresholdPolicy(1, 1))
    assert pa.mu[State(1, 0)] == pytest.approx(3 / 7, abs=1e-12)
    assert pa.mu[State(1, 1)] == pytest.approx(4 / 7, abs=1e-12)
    assert pa.j == pytest.approx(4 / 7, abs=1e-12)
    assert pa.a == pytest.approx(1.0, abs=1e-12)


def test_stationary_matches_oracle_error_prone():
    rng = np.random.default_rng(11)
    for _ in range(30):
        params = random_params(rng)
        policy = random_policy(rng, params.d_max)
        got = stationary_distribution(params, policy)
        ref = stationary_oracle(params, policy)
        for s, v in got.mu.items():
            assert v == pytest.approx(ref.mu[s], abs=1e-9)
        assert got.j == pytest.approx(ref.j, abs=1e-9)
        assert got.a == pytest.approx(ref.a, abs=1e-9)


def test_stationary_matches_oracle_error_free():
    rng = np.random.default_rng(12)
    for _ in range(15):
        params = random_params(rng, p_one=True)
        policy = random_policy(rng, params.d_max)
        got = stationary_distribution(params, policy)
        ref = stationary_oracle(params, policy)
        for s, v in got.mu.items():
            assert v == pytest.approx(ref.mu[s], abs=1e-9)
        assert got.j == pytest.approx(ref.j, abs=1e-9)
        assert got.a == pytest.approx(ref.a, abs=1e-9)


def test_stationary_invariants():
    rng = np.random.default_rng(13)
    for _ in range(20):
        params = random_params(rng)
        policy = random_policy(rng, params.d_max)
        pa = stationary_distribution(params, policy)
        assert sum(pa.mu.values()) == pytest.approx(1.0, abs=1e-12)
        assert all(v >= 0.0 for v in pa.mu.values())
        # total mass per age level is flat below the lower threshold
        # (the cap level aggregates the tail, so it is excluded)
        h = min(policy.h0, policy.h1)
        base = pa.mu[State(1, 0)] + pa.mu[State(1, 1)]
        for d in range(2, min(h, params.d_max - 1) + 1):
            level = pa.mu[State(d, 0)] + pa.mu[State(d, 1)]
            assert level == pytest.approx(base, abs=1e-11)
        assert 0.0 <= pa.a <= 1.0 + 1e-12
        assert pa.j <= params.d_max + 1e-9


def test_error_free_unreachable_tail_is_empty():
    params = SubMdpParams(0.4, 0.3, 1.0, 12)
    policy = ThresholdPolicy(6, 4)
    pa = stationary_distribution(params, policy)
    for d in range(7, 13):
        assert pa.mu[State(d, 0)] == 0.0
        assert pa.mu[State(d, 1)] == 0.0


def test_active_time_extremes():
    rng = np.random.default_rng(14)
    for _ in range(10):
        params = random_params(rng)
        _, a_always = policy_j_a(params, ThresholdPolicy(1, 1))
        _, a_never = policy_j_a(params, ThresholdPolicy(params.d_max + 1, params.d_max + 1))
        assert a_always == pytest.approx(1.0, abs=1e-12)
        assert a_never == 0.0


def test_zeta():
    params = SubMdpParams(0.4, 0.6, 1.0, 10)
    never = ThresholdPolicy(11, 11)
    always = ThresholdPolicy(1, 1)
    assert zeta(params, never, always) == pytest.approx(3.6, abs=1e-12)
    assert zeta(params, never, always) == pytest.approx(
        zeta(params, always, never)
    )
    with pytest.raises(NumericalError):
        zeta(params, always, always)


def test_high_precision_agrees_with_float():
    rng = np.random.default_rng(15)
    for _ in range(6):
        params = random_params(rng, d_max_range=(3, 15))
        policy = random_policy(rng, params.d_max)
        j, a = policy_j_a(params, policy)
        j_hp, a_hp = policy_j_a_hp(params, policy)
        assert float(j_hp) == pytest.approx(j, rel=1e-10, abs=1e-10)
        assert float(a_hp) == pytest.approx(a, rel=1e-10, abs=1e-10)
