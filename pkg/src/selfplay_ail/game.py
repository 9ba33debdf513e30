"""The two-stage self-play loop, the game value J and the duality gap of averaged iterates."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .bandit import (
    PolicyTable,
    RewardTable,
    as_policy,
    as_rho,
    check_shapes,
    expected_value,
    reward_values,
)
from .divergences import DivergenceKind, divergence
from .errors import DimensionError, DomainError, InvalidParameterError
from .policy_player import kl_regularized_update, log_partition
from .reward_player import (
    Box,
    Link,
    MixedQuadratic,
    Psi,
    mixed_quadratic_reward_step,
    omd_reward_step,
    sign_reward,
)

_KL = DivergenceKind.KL()
_TV = DivergenceKind.TV()


class Mode(str, enum.Enum):
    UNMAPPED = "unmapped"
    MAPPED_DELTA_R = "mapped_delta_r"


@dataclass(frozen=True)
class GameConfig:
    """Hyperparameters of one self-play run.

    ``zeta`` is the proximal weight of the reward player.  It must be positive
    under a Box regularizer; under MixedQuadratic ``zeta = 0`` selects the
    closed-form best response.  ``r_max`` is the box every reward is clamped to.
    """

    iterations: int
    beta: float
    zeta: float
    r_max: float
    regularizer: Psi
    link: Link = Link.IDENTITY
    mode: Mode = Mode.UNMAPPED

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise InvalidParameterError("; ".join(problems))
        object.__setattr__(self, "link", Link(self.link))
        object.__setattr__(self, "mode", Mode(self.mode))

    def violations(self) -> list[str]:
        out = []
        if int(self.iterations) != self.iterations or self.iterations < 1:
            out.append(f"iterations must be a positive integer, got {self.iterations}")
        if not self.beta > 0:
            out.append(f"beta must be positive, got {self.beta}")
        if not self.r_max > 0:
            out.append(f"r_max must be positive, got {self.r_max}")
        if isinstance(self.regularizer, Box):
            if not self.zeta > 0:
                out.append(f"zeta must be positive under a Box regularizer, got {self.zeta}")
        elif isinstance(self.regularizer, MixedQuadratic):
            if not self.zeta >= 0:
                out.append(f"zeta must be non-negative, got {self.zeta}")
            if Link(self.link) is not Link.IDENTITY:
                out.append("MixedQuadratic reward steps are only defined for the identity link")
        else:
            out.append(f"unknown regularizer {self.regularizer!r}")
        try:
            Link(self.link)
        except ValueError:
            out.append(f"unknown link {self.link!r}")
        try:
            Mode(self.mode)
        except ValueError:
            out.append(f"unknown mode {self.mode!r}")
        return out


@dataclass(frozen=True, eq=False)
class IterateHistory:
    """Iterates pi^1..pi^{K+1}, rewards r^1..r^K and per-step diagnostics.

    ``mapped_rewards[k]`` is beta log(pi^{k+1} / pi^k), the reward the policy
    step actually realized.  ``game_values[k]`` is J(pi^k, r^k).
    """

    policies: list
    rewards: list
    mapped_rewards: list
    game_values: list
    kl_to_expert: list
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        k = len(self.rewards)
        lengths = (len(self.policies), len(self.mapped_rewards), len(self.game_values), len(self.kl_to_expert))
        if lengths != (k + 1, k, k, k + 1):
            raise DimensionError(f"inconsistent history lengths {lengths} for K={k}")
        if any(v < 0 for v in self.kl_to_expert):
            raise DimensionError("kl_to_expert entries must be non-negative")

    @property
    def iterations(self) -> int:
        return len(self.rewards)


@dataclass(frozen=True, eq=False)
class DualityGapReport:
    gap: float
    avg_policy: PolicyTable
    avg_reward: RewardTable
    d_const: float
    b_const: float
    bound_value: float
    max_term: float = 0.0
    min_term: float = 0.0


def game_value(pi, r, p_star, rho) -> float:
    """J(pi, r) = E_rho[E_{pi*} r - E_pi r]."""
    v = reward_values(r)
    check_shapes(as_policy(pi).probs, as_policy(p_star).probs, v, rho=as_rho(rho).probs)
    return expected_value(rho, p_star, v) - expected_value(rho, pi, v)


def _reward_step(config: GameConfig, r_prev, p_star, p_k, rho) -> RewardTable:
    psi = config.regularizer
    if isinstance(psi, Box):
        r_max = min(config.r_max, psi.r_max)
        return omd_reward_step(r_prev, p_star, p_k, rho, config.zeta, r_max, config.link)
    return mixed_quadratic_reward_step(r_prev, p_star, p_k, rho, psi, config.zeta, config.r_max)


def run_selfplay(config: GameConfig, p_star, p_ref, rho) -> IterateHistory:
    """Alternate a reward step and a KL-regularized policy step for K iterations.

    Starts from pi^1 = p_ref and r^0 = 0.  In mapped mode the policy step sees
    r^k - beta log Z^k(x) instead of r^k; the reward player keeps r^k as its
    proximal anchor in both modes.
    """
    ps = as_policy(p_star)
    pi = as_policy(p_ref)
    rho_d = as_rho(rho)
    check_shapes(ps.probs, pi.probs, rho=rho_d.probs)
    if np.any(pi.probs <= 0):
        raise DomainError("p_ref must have full support")

    r_prev = RewardTable.zeros(pi.shape)
    policies, rewards, mapped, values = [pi], [], [], []
    kls = [divergence(_KL, ps, pi, rho_d)]
    for _ in range(int(config.iterations)):
        r = _reward_step(config, r_prev, ps, pi, rho_d)
        values.append(game_value(pi, r, ps, rho_d))
        tilt = r.values
        if config.mode is Mode.MAPPED_DELTA_R:
            tilt = r.values - config.beta * log_partition(pi, r, config.beta)[:, None]
        nxt = kl_regularized_update(pi, tilt, config.beta)
        dr = config.beta * (nxt.log_probs - pi.log_probs)
        mapped.append(RewardTable(dr, float(np.max(np.abs(dr)))))
        rewards.append(r)
        policies.append(nxt)
        kls.append(divergence(_KL, ps, nxt, rho_d))
        r_prev, pi = r, nxt
    return IterateHistory(policies, rewards, mapped, values, kls)


def average_policy(history: IterateHistory) -> PolicyTable:
    """Uniform average of pi^1..pi^K (the final pi^{K+1} is excluded)."""
    stack = np.stack([p.probs for p in history.policies[:-1]])
    return PolicyTable.from_weights(stack.mean(axis=0))


def average_reward(history: IterateHistory) -> RewardTable:
    vals = np.stack([r.values for r in history.rewards]).mean(axis=0)
    return RewardTable(vals, max(r.r_max_bound for r in history.rewards))


def argmax_policy(r) -> PolicyTable:
    """All mass on argmax_y r(x, y), lowest index on ties."""
    v = reward_values(r)
    return PolicyTable.one_hot(np.argmax(v, axis=1), v.shape[1])


def duality_gap(history: IterateHistory, p_star, rho, r_max: float) -> DualityGapReport:
    """max_r J(pi_bar, r) - min_pi J(pi, r_bar), both extremes in closed form.

    The box best response is the sign reward; the simplex best response puts
    all mass on the argmax of r_bar.  D and B are run-measured proxies: the
    largest KL(pi* || pi^k) seen, and max_k 1/2 ||r^k - r*||^2 / R^2 with the
    saddle reward r* = 0 (at pi = pi* every reward direction has zero gain and
    the regularized best response is 0).
    """
    if history.iterations < 1:
        raise InvalidParameterError("history is empty")
    if not r_max > 0:
        raise InvalidParameterError(f"r_max must be positive, got {r_max}")
    ps = as_policy(p_star)
    rho_d = as_rho(rho)
    pi_bar = average_policy(history)
    r_bar = average_reward(history)
    max_term = game_value(pi_bar, sign_reward(ps, pi_bar, r_max), ps, rho_d)
    # min_pi J(pi, r_bar) = E_{pi*} r_bar - E_rho max_y r_bar
    best = argmax_policy(r_bar)
    min_term = game_value(best, r_bar, ps, rho_d)
    gap = max_term - min_term

    k = history.iterations
    d_hat = max(history.kl_to_expert)
    b_hat = max(0.5 * float(np.sum(r.values**2)) for r in history.rewards) / r_max**2
    bound = (d_hat + b_hat) * r_max**2 / math.sqrt(k)
    return DualityGapReport(gap, pi_bar, r_bar, d_hat, b_hat, bound, max_term, min_term)


def gap_decomposition(history: IterateHistory, p_star, rho, r_max: float) -> tuple[float, float]:
    """The gap two ways: from the report, and as J(pi_bar, sign) - [E_{pi*} r_bar - E_rho max r_bar]."""
    rep = duality_gap(history, p_star, rho, r_max)
    rho_d = as_rho(rho)
    r_bar = rep.avg_reward.values
    direct = game_value(rep.avg_policy, sign_reward(p_star, rep.avg_policy, r_max), p_star, rho_d)
    expert = expected_value(rho_d, p_star, r_bar)
    top = math.fsum(rho_d.probs * r_bar.max(axis=1))
    return rep.gap, direct - (expert - top)


def rate_fit(gaps) -> tuple[float, float]:
    """Fit gap = constant * K^(-exponent) by least squares in log-log space."""
    pairs = [(float(k), float(g)) for k, g in gaps]
    if len({k for k, _ in pairs}) < 3:
        raise InvalidParameterError("rate_fit needs at least 3 distinct K values")
    if any(g <= 0 for _, g in pairs):
        raise DomainError("all gaps must be positive; a zero gap means convergence below tolerance")
    if any(k <= 0 for k, _ in pairs):
        raise DomainError("K values must be positive")
    lk = np.log([k for k, _ in pairs])
    lg = np.log([g for _, g in pairs])
    slope, intercept = np.polyfit(lk, lg, 1)
    return float(-slope), float(math.exp(intercept))


def theorem_schedule(iterations: int, d_hat: float, b_hat: float, r_max: float) -> tuple[float, float]:
    """(beta, zeta) = (sqrt(K) / D, sqrt(K) / (B R^2))."""
    if not d_hat > 0 or not b_hat > 0:
        raise InvalidParameterError("D and B proxies must be positive")
    root = math.sqrt(int(iterations))
    return root / d_hat, root / (b_hat * r_max**2)


def omd_regret_check(history: IterateHistory, p_star, rho, zeta: float, r_max: float, r_star=None):
    """Reward-player regret against r* and the standard projected-OMD bound.

    lhs = sum_k <r^k - r*, g^k> with loss vectors g^k = rho (pi^k - pi*);
    rhs = zeta B R^2 + K / (2 zeta) max_k ||g^k||^2 with B R^2 = max over the box of 1/2 ||r* - r||^2.
    """
    ps = as_policy(p_star).probs
    rho_p = as_rho(rho).probs[:, None]
    shape = ps.shape
    u = np.zeros(shape) if r_star is None else reward_values(r_star)
    lhs, g_max = 0.0, 0.0
    for pi, r in zip(history.policies[:-1], history.rewards):
        g = rho_p * (pi.probs - ps)
        lhs += float(np.sum((r.values - u) * g))
        g_max = max(g_max, float(np.sum(g * g)))
    b_r2 = 0.5 * float(np.sum((np.abs(u) + r_max) ** 2))
    k = history.iterations
    return lhs, zeta * b_r2 + k / (2.0 * zeta) * g_max


def telescoping_check(history: IterateHistory) -> tuple[float, float]:
    """(sum_k [KL_k - KL_{k+1}], KL_1 - KL_{K+1}) from the logged KL trace."""
    kl = history.kl_to_expert
    steps = math.fsum(kl[i] - kl[i + 1] for i in range(len(kl) - 1))
    return steps, kl[0] - kl[-1]


def calibrated_schedule(iterations: int, p_star, p_ref, rho, r_max: float, rounds: int = 2):
    """Theorem schedule with D and B re-measured from pilot runs.

    Starts from D = KL(pi* || p_ref) and the box value B = n_cells / 2, then
    ``rounds`` times runs the Box game with the current schedule and replaces
    D and B by the proxies measured on that run.  Returns (beta, zeta, D, B).
    """
    ps = as_policy(p_star)
    d_hat = divergence(_KL, ps, p_ref, rho)
    b_hat = ps.probs.size / 2.0
    if not d_hat > 0:
        raise DomainError("p_ref already equals p_star; the schedule is undefined")
    for _ in range(int(rounds)):
        beta, zeta = theorem_schedule(iterations, d_hat, b_hat, r_max)
        hist = run_selfplay(GameConfig(iterations, beta, zeta, r_max, Box(r_max)), ps, p_ref, rho)
        rep = duality_gap(hist, ps, rho, r_max)
        if rep.d_const > 0 and rep.b_const > 0:
            d_hat, b_hat = rep.d_const, rep.b_const
    beta, zeta = theorem_schedule(iterations, d_hat, b_hat, r_max)
    return beta, zeta, d_hat, b_hat
