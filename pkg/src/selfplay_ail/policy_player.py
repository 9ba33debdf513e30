"""The policy (min) player: KL-regularized mirror-descent updates and the reward mapping.

Only the temperature ``beta`` is exposed.  The step size used by the analysis
is ``eta = 1 / beta``.
"""

from __future__ import annotations

import math

import numpy as np

from .bandit import PolicyTable, RewardTable, as_policy, as_rho, check_shapes, expected_value, reward_values
from .divergences import DivergenceKind, per_context_divergence
from .errors import InvalidParameterError, NumericalDegeneracyError

_KL = DivergenceKind.KL()


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not beta > 0:
        raise InvalidParameterError(f"beta must be positive, got {beta}")
    return beta


def tilted_log_weights(p_k, r, beta: float) -> np.ndarray:
    """log pi^k + r / beta, shifted so each row's maximum is 0."""
    beta = _check_beta(beta)
    pk = as_policy(p_k)
    v = reward_values(r)
    check_shapes(pk.probs, v)
    z = pk.log_probs + v / beta
    if not np.all(np.isfinite(z)):
        raise NumericalDegeneracyError("non-finite tilted log-weights")
    return z - z.max(axis=1, keepdims=True)


def kl_regularized_update(p_k, r, beta: float) -> PolicyTable:
    """argmax_pi E_pi[r] - beta KL(pi || pi^k), i.e. pi^k exp(r / beta) normalized."""
    w = np.exp(tilted_log_weights(p_k, r, beta))
    sums = w.sum(axis=1)
    if not np.all(np.isfinite(sums)) or np.any(sums <= 0):
        raise NumericalDegeneracyError("tilted row underflowed to zero mass")
    return PolicyTable.from_weights(w)


def log_partition(p_k, r, beta: float) -> np.ndarray:
    """log sum_y pi^k(y|x) exp(r(x, y) / beta) for every context."""
    beta = _check_beta(beta)
    pk = as_policy(p_k)
    v = reward_values(r)
    check_shapes(pk.probs, v)
    z = pk.log_probs + v / beta
    m = z.max(axis=1)
    return m + np.log(np.exp(z - m[:, None]).sum(axis=1))


def reward_mapping(pi, p_k, beta: float) -> RewardTable:
    """Delta r = beta log(pi / pi^k), the partition-free implicit reward."""
    beta = _check_beta(beta)
    a = as_policy(pi)
    b = as_policy(p_k)
    check_shapes(a.probs, b.probs)
    dr = beta * (a.log_probs - b.log_probs)
    if not np.all(np.isfinite(dr)):
        raise NumericalDegeneracyError("reward mapping needs full-support policies")
    return RewardTable(dr, float(np.max(np.abs(dr))))


def one_step_descent_check(p_star, p, r, beta: float, rho=None, r_max: float | None = None):
    """Both sides of the one-step descent inequality, averaged under rho.

    lhs = E_rho <r(x,.), pi*(.|x) - pi(.|x)>
    rhs = eta R^2 / 2 + (KL(pi*||pi) - KL(pi*||pi')) / eta,  eta = 1/beta,

    where pi' is the KL-regularized update of pi with reward r.
    """
    beta = _check_beta(beta)
    ps = as_policy(p_star)
    pp = as_policy(p)
    v = reward_values(r)
    check_shapes(ps.probs, pp.probs, v)
    if rho is None:
        rho = np.full(v.shape[0], 1.0 / v.shape[0])
    rho_p = as_rho(rho).probs
    if r_max is None:
        r_max = float(np.max(np.abs(v)))
    eta = 1.0 / beta
    lhs = expected_value(rho_p, ps, v) - expected_value(rho_p, pp, v)
    p_next = kl_regularized_update(pp, v, beta)
    kl_drop = per_context_divergence(_KL, ps, pp) - per_context_divergence(_KL, ps, p_next)
    rhs = eta * r_max**2 / 2.0 + math.fsum(rho_p * kl_drop) / eta
    return lhs, rhs


def kl_upper_check(p, r, beta: float):
    """(max_x KL(pi'(.|x) || pi(.|x)), ||r||_inf^2 / (2 beta^2)) for pi' the tilted update."""
    beta = _check_beta(beta)
    v = reward_values(r)
    p_next = kl_regularized_update(p, v, beta)
    lhs = float(np.max(per_context_divergence(_KL, p_next, p)))
    return lhs, float(np.max(np.abs(v))) ** 2 / (2.0 * beta**2)
