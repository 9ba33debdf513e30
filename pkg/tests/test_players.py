import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfplay_ail.bandit import ContextDistribution, PolicyTable, RewardTable
from selfplay_ail.divergences import DivergenceKind, divergence, optimal_mixed_chi2_reward, variational_value
from selfplay_ail.errors import InvalidParameterError, NumericalDegeneracyError
from selfplay_ail.game import game_value
from selfplay_ail.policy_player import (
    kl_regularized_update,
    kl_upper_check,
    log_partition,
    one_step_descent_check,
    reward_mapping,
)
from selfplay_ail.reward_player import (
    Box,
    Link,
    MixedQuadratic,
    RegularizerSpec,
    omd_reward_step,
    reward_objective,
    sign_reward,
)

from conftest import rho1, tables

HALF = PolicyTable(np.array([[0.5, 0.5]]))

# ------------------------------------------------------------ reward player


def test_reward_objective_examples():
    a, b = PolicyTable(np.array([[0.8, 0.2]])), PolicyTable(np.array([[0.2, 0.8]]))
    z = np.zeros((1, 2))
    mq = RegularizerSpec(MixedQuadratic(2.0, 0.5))
    assert reward_objective(z, a, b, rho1(), Link.IDENTITY, mq, z) == 0.0
    assert reward_objective(z, a, b, rho1(), Link.LOGISTIC, RegularizerSpec(Box(1.0)), z) == pytest.approx(
        -math.log(2), abs=1e-12
    )
    r = optimal_mixed_chi2_reward(a, b, 2.0)
    assert reward_objective(r, a, b, rho1(), Link.IDENTITY, mq, z) == pytest.approx(
        variational_value(r, a, b, rho1(), 2.0), abs=1e-10
    )


@given(tables(), st.sampled_from([0.5, 2.0]), st.integers(0, 1000))
def test_closed_form_reward_maximizes_objective(t, c, seed):
    a, b, rho = t
    spec = RegularizerSpec(MixedQuadratic(c, 0.5))
    z = np.zeros(a.shape)
    best = reward_objective(optimal_mixed_chi2_reward(a, b, c), a, b, rho, Link.IDENTITY, spec, z)
    g = np.random.default_rng(seed)
    for _ in range(50):
        r = g.uniform(-1.0 / c, 1.0 / c, size=a.shape)
        assert reward_objective(r, a, b, rho, Link.IDENTITY, spec, z) <= best + 1e-12


def test_omd_step_examples():
    ps, pk = PolicyTable(np.array([[1.0, 0.0]])), PolicyTable(np.array([[0.0, 1.0]]))
    r = omd_reward_step(np.zeros((1, 2)), ps, pk, rho1(), 2.0, 10.0)
    assert np.allclose(r.values, [[0.5, -0.5]], atol=1e-15)
    prev = np.array([[0.3, -0.1]])
    same = omd_reward_step(prev, ps, ps, rho1(), 2.0, 10.0)
    assert np.array_equal(same.values, prev)


@given(tables(), st.floats(0.01, 10.0), st.floats(0.05, 2.0), st.integers(0, 1000))
def test_omd_step_stays_in_box(t, zeta, r_max, seed):
    a, b, rho = t
    prev = np.random.default_rng(seed).uniform(-r_max, r_max, size=a.shape)
    r = omd_reward_step(prev, a, b, rho, zeta, r_max)
    assert np.max(np.abs(r.values)) <= r_max


def test_omd_step_rejects_bad_zeta():
    with pytest.raises(InvalidParameterError):
        omd_reward_step(np.zeros((1, 2)), HALF, HALF, rho1(), 0.0, 1.0)


def test_sign_reward_examples():
    assert np.all(sign_reward(HALF, HALF, 2.0).values == 0)
    r = sign_reward(PolicyTable(np.array([[0.9, 0.1]])), HALF, 3.0)
    assert np.array_equal(r.values, [[3.0, -3.0]])


@given(tables(), st.floats(0.1, 5.0), st.integers(0, 1000))
def test_sign_reward_is_best_box_response(t, r_max, seed):
    ps, pbar, rho = t
    v = game_value(pbar, sign_reward(ps, pbar, r_max), ps, rho)
    assert v == pytest.approx(2 * r_max * divergence(DivergenceKind.TV(), ps, pbar, rho), abs=1e-10)
    g = np.random.default_rng(seed)
    for _ in range(100):
        r = g.uniform(-r_max, r_max, size=ps.shape)
        assert game_value(pbar, r, ps, rho) <= v + 1e-10


# ------------------------------------------------------------ policy player


def test_kl_update_examples():
    assert np.allclose(kl_regularized_update(HALF, np.zeros((1, 2)), 1.0).probs, HALF.probs)
    out = kl_regularized_update(HALF, np.array([[math.log(3), 0.0]]), 1.0)
    assert np.allclose(out.probs, [[0.75, 0.25]], atol=1e-15)
    pk = PolicyTable(np.array([[0.3, 0.7]]))
    far = kl_regularized_update(pk, np.array([[5.0, -5.0]]), 1e12)
    assert np.max(np.abs(far.probs - pk.probs)) <= 1e-10


def test_kl_update_degenerate_input_raises():
    with pytest.raises((NumericalDegeneracyError, InvalidParameterError)):
        kl_regularized_update(HALF, np.array([[np.inf, 0.0]]), 1.0)
    with pytest.raises(InvalidParameterError):
        kl_regularized_update(HALF, np.zeros((1, 2)), 0.0)


def test_log_partition_examples():
    pk = PolicyTable(np.array([[0.2, 0.8], [0.5, 0.5]]))
    assert np.allclose(log_partition(pk, np.zeros((2, 2)), 2.0), 0.0)
    assert np.allclose(log_partition(pk, np.full((2, 2), 3.0), 2.0), 1.5)
    assert log_partition(HALF, np.array([[math.log(3), 0.0]]), 1.0)[0] == pytest.approx(math.log(2), abs=1e-15)


def test_reward_mapping_examples():
    assert np.all(reward_mapping(HALF, HALF, 1.0).values == 0)
    dr = reward_mapping(PolicyTable(np.array([[0.75, 0.25]])), HALF, 1.0).values
    assert np.allclose(dr, [[math.log(1.5), math.log(0.5)]], atol=1e-15)


@given(tables(), st.floats(0.1, 10.0))
def test_reward_mapping_round_trip(t, beta):
    pi, pk, _ = t
    back = kl_regularized_update(pk, reward_mapping(pi, pk, beta), beta)
    assert np.max(np.abs(back.probs - pi.probs)) <= 1e-10


def test_one_step_descent_examples():
    ps, p = PolicyTable(np.array([[0.9, 0.1]])), HALF
    lhs, rhs = one_step_descent_check(ps, p, np.zeros((1, 2)), 1.0)
    assert lhs == 0.0 and rhs == pytest.approx(0.0, abs=1e-15)
    lhs, rhs = one_step_descent_check(ps, ps, np.array([[1.0, -2.0]]), 0.5)
    assert lhs == pytest.approx(0.0, abs=1e-15) and rhs >= lhs


@given(tables(), st.floats(0.1, 100.0), st.integers(0, 1000))
def test_descent_and_kl_upper_lemmas(t, beta, seed):
    ps, p, rho = t
    r = np.random.default_rng(seed).uniform(-2.0, 2.0, size=ps.shape)
    lhs, rhs = one_step_descent_check(ps, p, r, beta, rho)
    assert lhs <= rhs + 1e-10
    kl, bound = kl_upper_check(p, r, beta)
    assert kl <= bound + 1e-10


@given(tables(), st.floats(0.1, 10.0), st.integers(0, 1000))
def test_constant_shift_invariance(t, beta, seed):
    _, p, _ = t
    r = np.random.default_rng(seed).normal(size=p.shape)
    shift = np.random.default_rng(seed + 1).normal(size=(p.shape[0], 1))
    a = kl_regularized_update(p, r, beta).probs
    b = kl_regularized_update(p, r + shift, beta).probs
    assert np.max(np.abs(a - b)) <= 1e-12
