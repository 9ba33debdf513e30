import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfplay_ail.bandit import BanditSpace, ContextDistribution, PolicyTable, RewardTable, random_policy
from selfplay_ail.divergences import DivergenceKind, divergence
from selfplay_ail.errors import DomainError, InvalidParameterError
from selfplay_ail.game import (
    GameConfig,
    IterateHistory,
    Mode,
    calibrated_schedule,
    duality_gap,
    game_value,
    gap_decomposition,
    omd_regret_check,
    rate_fit,
    run_selfplay,
    telescoping_check,
    theorem_schedule,
)
from selfplay_ail.reward_player import Box, Link, MixedQuadratic, omd_reward_step, sign_reward

from conftest import rho1, tables

_KL = DivergenceKind.KL()


def test_game_value_examples():
    ps, pi = PolicyTable(np.array([[0.9, 0.1]])), PolicyTable(np.array([[0.5, 0.5]]))
    assert game_value(pi, np.array([[1.0, -1.0]]), ps, rho1()) == pytest.approx(0.8, abs=1e-15)
    assert game_value(ps, np.array([[1.0, -1.0]]), ps, rho1()) == 0.0
    assert game_value(pi, np.full((1, 2), 4.2), ps, rho1()) == pytest.approx(0.0, abs=1e-15)


def test_fixed_point_when_reference_is_expert():
    ps = random_policy(BanditSpace(2, 3), 1.0, 4)
    rho = ContextDistribution(np.array([0.3, 0.7]))
    h = run_selfplay(GameConfig(5, 1.0, 1.0, 1.0, Box(1.0)), ps, ps, rho)
    assert all(abs(v) <= 1e-15 for v in h.game_values)
    assert all(np.allclose(p.probs, ps.probs, atol=1e-15) for p in h.policies)


def test_single_step_matches_hand_reward_step():
    ps, pr = PolicyTable(np.array([[0.9, 0.1]])), PolicyTable(np.array([[0.5, 0.5]]))
    h = run_selfplay(GameConfig(1, 1.0, 2.0, 1.0, Box(1.0)), ps, pr, rho1())
    # (1/zeta)(pi* - pi^1) = [0.2, -0.2]
    assert np.allclose(h.rewards[0].values, [[0.2, -0.2]], atol=1e-15)
    ref = omd_reward_step(np.zeros((1, 2)), ps, pr, rho1(), 2.0, 1.0)
    assert np.array_equal(h.rewards[0].values, ref.values)


def test_theorem_schedule_run_reduces_kl():
    ps = random_policy(BanditSpace(2, 4), 0.5, 12)
    pr = PolicyTable.uniform(BanditSpace(2, 4))
    rho = ContextDistribution.uniform(2)
    beta, zeta, _, _ = calibrated_schedule(512, ps, pr, rho, 1.0)
    h = run_selfplay(GameConfig(512, beta, zeta, 1.0, Box(1.0)), ps, pr, rho)
    assert h.kl_to_expert[-1] < h.kl_to_expert[0]


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        GameConfig(0, 1.0, 1.0, 1.0, Box(1.0))
    with pytest.raises(InvalidParameterError):
        GameConfig(3, 1.0, 0.0, 1.0, Box(1.0))
    with pytest.raises(InvalidParameterError):
        GameConfig(3, 1.0, 0.0, 1.0, MixedQuadratic(2.0), link=Link.LOGISTIC)
    assert GameConfig(3, 1.0, 0.0, 1.0, MixedQuadratic(2.0)).zeta == 0.0


def _history(policies, rewards, p_star, rho):
    kls = [divergence(_KL, p_star, p, rho) for p in policies]
    vals = [game_value(p, r, p_star, rho) for p, r in zip(policies, rewards)]
    return IterateHistory(policies, rewards, list(rewards), vals, kls)


def test_duality_gap_examples():
    ps = PolicyTable(np.array([[1.0, 0.0]]))
    half = PolicyTable(np.array([[0.5, 0.5]]))
    zero = RewardTable.zeros((1, 2), 1.0)
    rep = duality_gap(_history([half, half], [zero], ps, rho1()), ps, rho1(), 1.0)
    assert rep.gap == pytest.approx(1.0, abs=1e-15)
    star = PolicyTable(np.array([[0.6, 0.4]]))
    rep0 = duality_gap(_history([star, star], [RewardTable.zeros((1, 2), 1.0)], star, rho1()), star, rho1(), 1.0)
    assert rep0.gap == 0.0


@given(tables(), st.integers(0, 1000))
def test_gap_reduces_when_average_is_expert(t, seed):
    ps, _, rho = t
    rbar = np.random.default_rng(seed).uniform(-1, 1, size=ps.shape)
    rep = duality_gap(_history([ps, ps], [RewardTable(rbar, 1.0)], ps, rho), ps, rho, 1.0)
    expect = float(np.sum(rho.probs * (rbar.max(axis=1) - (ps.probs * rbar).sum(axis=1))))
    assert rep.gap == pytest.approx(expect, abs=1e-12)
    assert rep.gap >= 0


@given(tables(), st.integers(1, 40), st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.sampled_from(list(Mode)))
def test_run_invariants(t, k, beta, zeta, mode):
    ps, pr, rho = t
    h = run_selfplay(GameConfig(k, beta, zeta, 1.0, Box(1.0), mode=mode), ps, pr, rho)
    rep = duality_gap(h, ps, rho, 1.0)
    assert rep.gap >= -1e-9
    # two evaluation paths of the same gap
    direct = game_value(rep.avg_policy, sign_reward(ps, rep.avg_policy, 1.0), ps, rho) - (
        float(np.sum(rho.probs * ((ps.probs * rep.avg_reward.values).sum(axis=1) - rep.avg_reward.values.max(axis=1))))
    )
    assert rep.gap == pytest.approx(direct, abs=1e-10)
    steps, ends = telescoping_check(h)
    assert steps == pytest.approx(ends, abs=1e-9)
    a, b = gap_decomposition(h, ps, rho, 1.0)
    assert a == pytest.approx(b, abs=1e-9)


@given(tables(), st.integers(1, 30), st.floats(0.2, 5.0))
def test_mapped_mode_gives_same_policies(t, k, beta):
    ps, pr, rho = t
    cfg = dict(iterations=k, beta=beta, zeta=1.0, r_max=1.0, regularizer=Box(1.0))
    a = run_selfplay(GameConfig(**cfg), ps, pr, rho)
    b = run_selfplay(GameConfig(**cfg, mode=Mode.MAPPED_DELTA_R), ps, pr, rho)
    for x, y in zip(a.policies, b.policies):
        assert np.max(np.abs(x.probs - y.probs)) <= 1e-8
    ga = duality_gap(a, ps, rho, 1.0).gap
    gb = duality_gap(b, ps, rho, 1.0).gap
    assert ga == pytest.approx(gb, abs=1e-8)


@given(tables(), st.integers(1, 30), st.floats(0.2, 5.0), st.floats(0.5, 5.0))
def test_omd_regret_bound_holds(t, k, beta, zeta):
    ps, pr, rho = t
    h = run_selfplay(GameConfig(k, beta, zeta, 1.0, Box(1.0)), ps, pr, rho)
    lhs, rhs = omd_regret_check(h, ps, rho, zeta, 1.0)
    assert lhs <= rhs + 1e-10


def test_rate_fit_exact_power_laws():
    ks = [16, 64, 256, 1024]
    e, c = rate_fit([(k, 7 / math.sqrt(k)) for k in ks])
    assert e == pytest.approx(0.5, abs=1e-6) and c == pytest.approx(7.0, abs=1e-6)
    e1, _ = rate_fit([(k, 3 / k) for k in ks])
    assert e1 == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(DomainError):
        rate_fit([(16, 1.0), (64, 0.0), (256, 0.1)])


def test_theorem_schedule_formula():
    beta, zeta = theorem_schedule(64, 2.0, 4.0, 0.5)
    assert beta == pytest.approx(8 / 2.0)
    assert zeta == pytest.approx(8 / (4.0 * 0.25))
