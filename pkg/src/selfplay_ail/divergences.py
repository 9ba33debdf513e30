"""Statistical distances between policy tables and the mixed chi-square variational form.

The mixed chi-square "divergence" reported here is the optimal value of the
regularized variational problem

    sup_r  E_{pi*}[r] - E_pi[r] - c*alpha*E_{pi*}[r^2] - c*(1-alpha)*E_pi[r^2],

which per cell is ``(p* - p)^2 / (4c (alpha p* + (1-alpha) p))``.  At
``alpha = 1/2`` this is ``(1/2c) * sum (p* - p)^2 / (p* + p)`` and is bounded
by ``1/c``; the maximizing reward lies in ``[-1/c, 1/c]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bandit import (
    PROB_FLOOR,
    RewardTable,
    as_policy,
    as_rho,
    check_shapes,
    expected_value,
    reward_values,
)
from .errors import InvalidParameterError

_TAGS = ("tv", "kl", "chi2", "mixed_chi2")


@dataclass(frozen=True)
class DivergenceKind:
    tag: str
    alpha: float | None = None
    c: float | None = None

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise InvalidParameterError(f"unknown divergence {self.tag!r}; expected one of {_TAGS}")
        if self.tag == "mixed_chi2":
            if self.alpha is None or not 0 < self.alpha < 1:
                raise InvalidParameterError("MixedChi2 requires 0 < alpha < 1")
            if self.c is None or not self.c > 0:
                raise InvalidParameterError("MixedChi2 requires c > 0")

    @classmethod
    def TV(cls) -> DivergenceKind:
        return cls("tv")

    @classmethod
    def KL(cls) -> DivergenceKind:
        return cls("kl")

    @classmethod
    def Chi2(cls) -> DivergenceKind:
        return cls("chi2")

    @classmethod
    def MixedChi2(cls, alpha: float = 0.5, c: float = 1.0) -> DivergenceKind:
        return cls("mixed_chi2", alpha=float(alpha), c=float(c))


def per_context_divergence(kind: DivergenceKind, p_star, p) -> np.ndarray:
    """Divergence of each row of ``p_star`` from the matching row of ``p``."""
    a = as_policy(p_star).probs
    b = as_policy(p).probs
    check_shapes(a, b)
    if kind.tag == "tv":
        return 0.5 * np.abs(a - b).sum(axis=1)
    if kind.tag == "kl":
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(a > 0, a * (np.log(a) - np.log(b)), 0.0)
        # Gibbs: the true value is >= 0; renormalization noise can push it below
        return np.maximum(terms.sum(axis=1), 0.0)
    if kind.tag == "chi2":
        return ((a - b) ** 2 / b).sum(axis=1)
    mix = kind.alpha * a + (1.0 - kind.alpha) * b
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(mix > 0, (a - b) ** 2 / (4.0 * kind.c * mix), 0.0)
    return terms.sum(axis=1)


def divergence(kind: DivergenceKind, p_star, p, rho) -> float:
    """rho-average of the per-context divergence D(p_star(.|x) || p(.|x))."""
    rho_p = as_rho(rho).probs
    check_shapes(as_policy(p).probs, rho=rho_p)
    return math.fsum(rho_p * per_context_divergence(kind, p_star, p))


def mixed_chi2_reward_bounds(c: float, alpha: float = 0.5) -> tuple[float, float]:
    """(r_min, r_max) of the closed-form maximizer: (-1/(2c(1-alpha)), 1/(2c alpha))."""
    return -1.0 / (2.0 * c * (1.0 - alpha)), 1.0 / (2.0 * c * alpha)


def optimal_mixed_chi2_reward(p_star, p, c: float, alpha: float = 0.5) -> RewardTable:
    """Closed-form maximizer ``(p* - p) / (2c (alpha p* + (1-alpha) p))``.

    Cells where both inputs sit at the probability floor get reward 0.
    """
    if not c > 0:
        raise InvalidParameterError(f"c must be positive, got {c}")
    if not 0 < alpha < 1:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
    a = as_policy(p_star).probs
    b = as_policy(p).probs
    check_shapes(a, b)
    denom = 2.0 * (alpha * a + (1.0 - alpha) * b)
    both_floored = (a <= PROB_FLOOR) & (b <= PROB_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(both_floored | (denom == 0), 0.0, (a - b) / denom) / c
    r_min, r_max = mixed_chi2_reward_bounds(c, alpha)
    return RewardTable(r, max(r_max, -r_min))


def variational_value(r, p_star, p, rho, c: float, alpha: float = 0.5) -> float:
    """E_{pi*}[r] - E_pi[r] - c alpha E_{pi*}[r^2] - c (1-alpha) E_pi[r^2], all under rho."""
    if not 0 <= alpha <= 1:
        raise InvalidParameterError(f"alpha must lie in [0, 1], got {alpha}")
    v = reward_values(r)
    sq = v * v
    return (
        expected_value(rho, p_star, v)
        - expected_value(rho, p, v)
        - c * alpha * expected_value(rho, p_star, sq)
        - c * (1.0 - alpha) * expected_value(rho, p, sq)
    )


def _symmetric_grid(half_width: float, step: float) -> np.ndarray:
    n_half = math.ceil(half_width / step - 1e-9)
    h = half_width / n_half
    return np.arange(-n_half, n_half + 1) * h


def brute_force_variational_max(
    p_star, p, rho, c: float, grid_step: float = 1e-4, alpha: float = 0.5
) -> tuple[RewardTable, float]:
    """Grid-search oracle for the variational problem, one cell at a time.

    The objective separates over (x, y): each cell maximizes
    ``a r - b r - c alpha a r^2 - c (1-alpha) b r^2`` with ``a = p*(y|x)``,
    ``b = p(y|x)`` over ``r`` on a symmetric grid spanning ``[-1/c, 1/c]``.
    rho(x) > 0 only rescales a cell, so it does not move the argmax.
    """
    if not c > 0:
        raise InvalidParameterError(f"c must be positive, got {c}")
    if not 0 < grid_step <= 1.0 / c:
        raise InvalidParameterError(f"grid_step must lie in (0, 1/c], got {grid_step}")
    a = as_policy(p_star).probs
    b = as_policy(p).probs
    check_shapes(a, b, rho=as_rho(rho).probs)
    grid = _symmetric_grid(1.0 / c, grid_step)
    lin, quad = grid, grid * grid
    a_flat, b_flat = a.ravel(), b.ravel()
    best = np.empty_like(a_flat)
    chunk = max(1, 4_000_000 // grid.size)
    for start in range(0, a_flat.size, chunk):
        sl = slice(start, start + chunk)
        aa, bb = a_flat[sl, None], b_flat[sl, None]
        obj = (aa - bb) * lin - c * (alpha * aa + (1.0 - alpha) * bb) * quad
        best[sl] = grid[np.argmax(obj, axis=1)]
    table = RewardTable(best.reshape(a.shape), 1.0 / c)
    return table, variational_value(table, p_star, p, rho, c, alpha)
