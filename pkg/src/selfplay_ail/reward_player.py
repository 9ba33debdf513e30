"""The reward (max) player: link functions, regularizers and reward updates.

The proximal term is the plain Euclidean ``D_f(r, r') = 1/2 ||r - r'||^2``
summed over every (x, y) cell.  With that geometry the reward gain
``E_rho[E_{pi*} r - E_{pi^k} r]`` has gradient ``rho(x) (pi* - pi^k)`` and the
proximal step below is its exact box-constrained maximizer.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Union

import numpy as np

from .bandit import RewardTable, as_policy, as_rho, check_shapes, expected_value, reward_values
from .divergences import optimal_mixed_chi2_reward
from .errors import DomainError, InvalidParameterError


class Link(str, enum.Enum):
    """Monotone link applied to the per-context expectation gap."""

    IDENTITY = "identity"
    LOGISTIC = "logistic"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self is Link.IDENTITY:
            return t
        # -log(1 + exp(-t)), split at 0 so exp never overflows
        out = np.empty_like(t)
        pos = t >= 0
        out[pos] = -np.log1p(np.exp(-t[pos]))
        out[~pos] = t[~pos] - np.log1p(np.exp(t[~pos]))
        return out

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self is Link.IDENTITY:
            return np.ones_like(t)
        # d/dt -log(1+e^{-t}) = 1 / (1 + e^{t})
        out = np.empty_like(t)
        pos = t >= 0
        e = np.exp(-t[pos])
        out[pos] = e / (1.0 + e)
        out[~pos] = 1.0 / (1.0 + np.exp(t[~pos]))
        return out


@dataclass(frozen=True)
class Box:
    """psi(r) = 0 on ``||r||_inf <= r_max`` and +inf outside."""

    r_max: float

    def __post_init__(self):
        if not self.r_max > 0:
            raise InvalidParameterError("Box requires r_max > 0")


@dataclass(frozen=True)
class MixedQuadratic:
    """psi(r) = c alpha E_{pi*}[r^2] + c (1 - alpha) E_{pi}[r^2]."""

    c: float
    alpha: float = 0.5

    def __post_init__(self):
        if not self.c > 0:
            raise InvalidParameterError("MixedQuadratic requires c > 0")
        if not 0 < self.alpha < 1:
            raise InvalidParameterError("MixedQuadratic requires 0 < alpha < 1")


Psi = Union[Box, MixedQuadratic]


@dataclass(frozen=True)
class RegularizerSpec:
    psi: Psi
    bregman_weight: float = 0.0

    def __post_init__(self):
        if not self.bregman_weight >= 0:
            raise InvalidParameterError("bregman_weight (zeta) must be non-negative")


def bregman(r, r_prev) -> float:
    """1/2 ||r - r_prev||^2 over all cells."""
    d = reward_values(r) - reward_values(r_prev)
    return 0.5 * float(np.sum(d * d))


def psi_value(psi: Psi, r, p_star, p_k, rho) -> float:
    v = reward_values(r)
    if isinstance(psi, Box):
        if np.max(np.abs(v)) > psi.r_max * (1 + 1e-12):
            raise DomainError(f"reward leaves the box |r| <= {psi.r_max}")
        return 0.0
    sq = v * v
    return psi.c * psi.alpha * expected_value(rho, p_star, sq) + psi.c * (
        1.0 - psi.alpha
    ) * expected_value(rho, p_k, sq)


def per_context_gap(r, p_star, p_k) -> np.ndarray:
    """E_{pi*}[r(x, .)] - E_{pi^k}[r(x, .)] for every context."""
    v = reward_values(r)
    a = as_policy(p_star).probs
    b = as_policy(p_k).probs
    check_shapes(v, a, b)
    return ((a - b) * v).sum(axis=1)


def reward_objective(r, p_star, p_k, rho, link: Link, reg: RegularizerSpec, r_prev) -> float:
    """E_rho[sigma(gap_x(r))] - psi(r) - zeta D_f(r, r_prev)."""
    rho_p = as_rho(rho).probs
    gaps = per_context_gap(r, p_star, p_k)
    check_shapes(reward_values(r), rho=rho_p)
    value = float(np.sum(rho_p * Link(link)(gaps)))
    value -= psi_value(reg.psi, r, p_star, p_k, rho)
    if reg.bregman_weight:
        value -= reg.bregman_weight * bregman(r, r_prev)
    return value


def reward_gradient(r, p_star, p_k, rho, link: Link = Link.IDENTITY) -> np.ndarray:
    """Gradient of E_rho[sigma(gap_x(r))] with respect to the reward table."""
    rho_p = as_rho(rho).probs
    a = as_policy(p_star).probs
    b = as_policy(p_k).probs
    scale = rho_p * Link(link).derivative(per_context_gap(r, a, b))
    return scale[:, None] * (a - b)


def omd_reward_step(r_prev, p_star, p_k, rho, zeta: float, r_max: float, link: Link = Link.IDENTITY) -> RewardTable:
    """Projected mirror ascent: clip(r_prev + grad / zeta, -r_max, r_max).

    For the identity link the gradient is ``rho(x) (pi* - pi^k)`` and this is
    the exact maximizer of the linear gain minus ``zeta/2 ||r - r_prev||^2``
    over the box.  For the logistic link the gain is linearized at ``r_prev``.
    """
    if not zeta > 0:
        raise InvalidParameterError(f"zeta must be positive, got {zeta}")
    if not r_max > 0:
        raise InvalidParameterError(f"r_max must be positive, got {r_max}")
    prev = reward_values(r_prev)
    step = prev + reward_gradient(prev, p_star, p_k, rho, link) / zeta
    return RewardTable(np.clip(step, -r_max, r_max), r_max)


def mixed_quadratic_reward_step(
    r_prev, p_star, p_k, rho, psi: MixedQuadratic, zeta: float, r_max: float
) -> RewardTable:
    """Exact cellwise maximizer of the identity-link objective under MixedQuadratic.

    Each cell maximizes
    ``w (a - b) r - w c (alpha a + (1-alpha) b) r^2 - zeta/2 (r - r_prev)^2``
    with ``w = rho(x)``; the stationary point is clamped to ``[-r_max, r_max]``.
    With ``zeta = 0`` this is the closed-form optimal reward.
    """
    if not r_max > 0:
        raise InvalidParameterError(f"r_max must be positive, got {r_max}")
    if zeta == 0:
        r = optimal_mixed_chi2_reward(p_star, p_k, psi.c, psi.alpha).values
        return RewardTable(np.clip(r, -r_max, r_max), r_max)
    if zeta < 0:
        raise InvalidParameterError(f"zeta must be non-negative, got {zeta}")
    rho_p = as_rho(rho).probs[:, None]
    a = as_policy(p_star).probs
    b = as_policy(p_k).probs
    prev = reward_values(r_prev)
    check_shapes(a, b, prev, rho=rho_p[:, 0])
    mix = psi.alpha * a + (1.0 - psi.alpha) * b
    r = (rho_p * (a - b) + zeta * prev) / (2.0 * psi.c * rho_p * mix + zeta)
    return RewardTable(np.clip(r, -r_max, r_max), r_max)


def sign_reward(p_star, p_bar, r_max: float) -> RewardTable:
    """R_max * sign(pi* - p_bar), the box best response; sign(0) = 0."""
    if not r_max > 0:
        raise InvalidParameterError(f"r_max must be positive, got {r_max}")
    a = as_policy(p_star).probs
    b = as_policy(p_bar).probs
    check_shapes(a, b)
    return RewardTable(r_max * np.sign(a - b), r_max)
