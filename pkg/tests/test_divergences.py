import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfplay_ail.bandit import PolicyTable
from selfplay_ail.divergences import (
    DivergenceKind,
    brute_force_variational_max,
    divergence,
    optimal_mixed_chi2_reward,
    variational_value,
)

from conftest import rho1, tables

KINDS = [DivergenceKind.TV(), DivergenceKind.KL(), DivergenceKind.Chi2(), DivergenceKind.MixedChi2(0.5, 2.0)]
CS = st.sampled_from([0.125, 0.5, 2.0, 8.0])


def _pair():
    return PolicyTable(np.array([[0.8, 0.2]])), PolicyTable(np.array([[0.2, 0.8]]))


@pytest.mark.parametrize("kind", KINDS, ids=lambda k: k.tag)
def test_identical_distributions_have_zero_divergence(kind):
    p = PolicyTable(np.array([[0.3, 0.7], [0.6, 0.4]]))
    assert divergence(kind, p, p, np.array([0.5, 0.5])) == pytest.approx(0.0, abs=1e-15)


def test_kl_hand_value():
    v = divergence(DivergenceKind.KL(), PolicyTable(np.array([[0.5, 0.5]])), PolicyTable(np.array([[0.25, 0.75]])), rho1())
    assert v == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3), abs=1e-4)
    assert v == pytest.approx(0.14384, abs=1e-4)


def test_mixed_chi2_hand_value():
    a, b = _pair()
    # (1/(2c)) * sum (a-b)^2 / (a+b) with c = 0.5
    assert divergence(DivergenceKind.MixedChi2(0.5, 0.5), a, b, rho1()) == pytest.approx(0.72, abs=1e-10)


def test_optimal_reward_examples():
    a, b = _pair()
    assert np.allclose(optimal_mixed_chi2_reward(a, b, 0.5).values, [[1.2, -1.2]], atol=1e-12)
    assert np.all(optimal_mixed_chi2_reward(a, a, 0.5).values == 0)


def test_variational_value_of_zero_reward():
    a, b = _pair()
    assert variational_value(np.zeros((1, 2)), a, b, rho1(), 0.5) == 0.0


@given(tables(), CS)
def test_boundedness_and_optimality(t, c):
    a, b, rho = t
    d = divergence(DivergenceKind.MixedChi2(0.5, c), a, b, rho)
    assert -1e-15 <= d <= 1.0 / c + 1e-10
    r = optimal_mixed_chi2_reward(a, b, c)
    assert np.max(np.abs(r.values)) <= 1.0 / c
    assert variational_value(r, a, b, rho, c) == pytest.approx(d, abs=1e-8)


@given(tables(), CS, st.integers(0, 10_000))
def test_closed_form_reward_beats_random_feasible_rewards(t, c, seed):
    a, b, rho = t
    d = divergence(DivergenceKind.MixedChi2(0.5, c), a, b, rho)
    g = np.random.default_rng(seed)
    for _ in range(20):
        r = g.uniform(-1.0 / c, 1.0 / c, size=a.shape)
        assert variational_value(r, a, b, rho, c) <= d + 1e-10


@given(tables())
def test_pinsker_direction(t):
    a, b, rho = t
    kl = divergence(DivergenceKind.KL(), a, b, rho)
    tv = divergence(DivergenceKind.TV(), a, b, rho)
    # per-context Pinsker, then Jensen over rho
    assert kl >= 2.0 * tv * tv - 1e-10


def test_brute_force_examples():
    a, b = _pair()
    r, v = brute_force_variational_max(a, b, rho1(), 0.5, 1e-4)
    assert np.allclose(r.values, [[1.2, -1.2]], atol=1e-3)
    assert v == pytest.approx(0.72, abs=1e-4)
    r0, v0 = brute_force_variational_max(a, a, rho1(), 0.5, 1e-4)
    assert abs(v0) <= 1e-4 and np.max(np.abs(r0.values)) <= 1e-3


@given(tables(max_x=2, max_y=3), st.sampled_from([0.5, 2.0]))
def test_brute_force_never_exceeds_closed_form(t, c):
    a, b, rho = t
    _, v = brute_force_variational_max(a, b, rho, c, 1e-3)
    assert v <= divergence(DivergenceKind.MixedChi2(0.5, c), a, b, rho) + 1e-6
