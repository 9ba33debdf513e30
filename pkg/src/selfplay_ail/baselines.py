"""Reference self-play methods: SPIN, linear SPIN, SPPO, INPO and iterative DPO.

Every method has an exact tabular form.  The least-squares methods (SPPO,
INPO) are minimized by gradient descent on logits; their chi-square AIL
counterparts are provided with independent gradient code so the two can be
compared directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .bandit import (
    PolicyTable,
    RewardTable,
    as_policy,
    as_rho,
    check_shapes,
    log_softmax,
    reward_values,
)
from .divergences import DivergenceKind, divergence, per_context_divergence
from .errors import DomainError, InvalidParameterError, UnsupportedOracleError
from .game import IterateHistory, game_value
from .policy_player import kl_regularized_update
from .reward_player import sign_reward
from .spif import descend_logits

_KL = DivergenceKind.KL()


def _sigmoid(t):
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus(t):
    return np.logaddexp(0.0, t)


def _check_positive(name, v):
    if not v > 0:
        raise InvalidParameterError(f"{name} must be positive, got {v}")
    return float(v)


def _uniform_rho(n):
    return np.full(n, 1.0 / n)


# ---------------------------------------------------------------- preferences


@dataclass(frozen=True, eq=False)
class PreferenceOracle:
    """P(y > y' | x) as a (contexts, responses, responses) table.

    Build with :meth:`bradley_terry` (P = logistic(r*(y) - r*(y'))) or
    :meth:`general` from an explicit table.
    """

    kind: str
    table: np.ndarray
    latent_reward: RewardTable | None = None

    def __post_init__(self):
        if self.kind not in ("bradley_terry", "general"):
            raise InvalidParameterError(f"unknown oracle kind {self.kind!r}")
        p = np.array(self.table, dtype=float)
        if p.ndim != 3 or p.shape[1] != p.shape[2]:
            raise InvalidParameterError(f"preference table must be (X, Y, Y), got {p.shape}")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise DomainError("preference probabilities must lie in [0, 1]")
        if np.max(np.abs(p + np.swapaxes(p, 1, 2) - 1.0)) > 1e-12:
            raise DomainError("P(y > y') + P(y' > y) must equal 1")
        p.setflags(write=False)
        object.__setattr__(self, "table", p)

    @classmethod
    def bradley_terry(cls, latent_reward) -> PreferenceOracle:
        r = reward_values(latent_reward)
        diff = r[:, :, None] - r[:, None, :]
        p = _sigmoid(diff)
        # enforce exact complementarity after rounding
        p = 0.5 * (p + 1.0 - np.swapaxes(p, 1, 2))
        return cls("bradley_terry", p, RewardTable(r))

    @classmethod
    def general(cls, table) -> PreferenceOracle:
        return cls("general", table)

    @property
    def shape(self):
        return self.table.shape[:2]

    def win_rate(self, p_k) -> np.ndarray:
        """w^k(x, y) = E_{y' ~ pi^k} P(y > y' | x), by exact enumeration."""
        pk = as_policy(p_k).probs
        check_shapes(pk, np.empty(self.shape))
        return np.einsum("xab,xb->xa", self.table, pk)

    def expert(self) -> PolicyTable:
        """pi*(y|x) proportional to exp(r*(x, y)) for a Bradley-Terry oracle."""
        if self.kind != "bradley_terry":
            raise UnsupportedOracleError("the induced expert needs a Bradley-Terry oracle")
        return PolicyTable.from_weights(np.exp(log_softmax(self.latent_reward.values)))


@dataclass(frozen=True, eq=False)
class InpoConfig:
    eta: float
    tau: float
    p_ref: PolicyTable

    def __post_init__(self):
        if not self.eta > 0 or not self.tau > 0:
            raise InvalidParameterError("INPO needs eta > 0 and tau > 0")
        if self.tau > self.eta:
            raise InvalidParameterError(f"INPO needs tau <= eta, got tau={self.tau}, eta={self.eta}")
        object.__setattr__(self, "p_ref", as_policy(self.p_ref))


# ---------------------------------------------------------------------- SPIN


def _spin_terms(pi, p_k, p_star, rho, beta):
    beta = _check_positive("beta", beta)
    a = as_policy(pi)
    pk = as_policy(p_k)
    ps = as_policy(p_star).probs
    rho_p = as_rho(rho).probs
    check_shapes(a.probs, pk.probs, ps, rho=rho_p)
    dr = beta * (a.log_probs - pk.log_probs)
    margin = dr[:, :, None] - dr[:, None, :]  # (x, y, y')
    weight = rho_p[:, None, None] * ps[:, :, None] * pk.probs[:, None, :]
    return dr, margin, weight


def spin_logistic_loss(pi, p_k, p_star, rho, beta: float) -> float:
    """E_{x, y ~ pi*, y' ~ pi^k} log(1 + exp(-(dr(y) - dr(y'))))."""
    _, margin, weight = _spin_terms(pi, p_k, p_star, rho, beta)
    return float(np.sum(weight * _softplus(-margin)))


def spin_gradient(pi, p_k, p_star, rho, beta: float) -> np.ndarray:
    """Gradient of :func:`spin_logistic_loss` with respect to the logits of ``pi``."""
    pi = as_policy(pi)
    if pi.logits is None:
        raise InvalidParameterError("the policy must carry logits")
    _, margin, weight = _spin_terms(pi, p_k, p_star, rho, beta)
    s = weight * _sigmoid(-margin)
    g_dr = -s.sum(axis=2) + s.sum(axis=1)
    g_l = beta * g_dr
    probs = np.exp(log_softmax(pi.logits))
    return g_l - probs * g_l.sum(axis=1, keepdims=True)


def spin_train(p_star, p_ref, rho, beta: float, iterations: int, inner_steps: int, lr: float) -> IterateHistory:
    """SPIN by gradient descent on the logistic loss, warm-started from pi^k each iteration."""
    beta = _check_positive("beta", beta)
    _check_positive("lr", lr)
    ps = as_policy(p_star)
    rho_p = as_rho(rho).probs
    pk = PolicyTable(as_policy(p_ref).probs).with_logits()
    policies, rewards, values, traces = [pk], [], [], []
    kls = [divergence(_KL, ps, pk, rho_p)]
    for k in range(1, int(iterations) + 1):
        anchor = pk

        def loss_and_grad(theta, anchor=anchor):
            cur = PolicyTable(np.exp(log_softmax(theta)), logits=theta)
            loss = spin_logistic_loss(cur, anchor, ps, rho_p, beta)
            grad = spin_gradient(cur, anchor, ps, rho_p, beta)
            dr = beta * (cur.log_probs - anchor.log_probs)
            return loss, grad, float(np.max(np.abs(dr)))

        theta, trace = descend_logits(pk.logits, loss_and_grad, inner_steps, lr, k)
        nxt = PolicyTable(PolicyTable.from_logits(theta).probs).with_logits()
        dr = beta * (nxt.log_probs - anchor.log_probs)
        r = RewardTable(dr, float(np.max(np.abs(dr))))
        rewards.append(r)
        values.append(game_value(anchor, r, ps, rho_p))
        policies.append(nxt)
        kls.append(divergence(_KL, ps, nxt, rho_p))
        traces.append(trace)
        pk = nxt
    return IterateHistory(policies, rewards, list(rewards), values, kls, {"traces": traces})


def spin_exact_update(p_k, p_star, beta: float) -> PolicyTable:
    """pi^{k+1} proportional to pi^k^(1 - 1/beta) pi*^(1/beta)."""
    beta = _check_positive("beta", beta)
    if beta < 1:
        warnings.warn(f"beta={beta} < 1: the KL contraction is not guaranteed", RuntimeWarning, stacklevel=2)
    pk = as_policy(p_k)
    ps = as_policy(p_star)
    check_shapes(pk.probs, ps.probs)
    z = (1.0 - 1.0 / beta) * pk.log_probs + ps.log_probs / beta
    return PolicyTable.from_weights(np.exp(z - z.max(axis=1, keepdims=True)))


def linear_spin_update(p_k, p_star, rho, beta: float, r_max: float) -> PolicyTable:
    """Sign-reward best response followed by the KL-regularized policy step."""
    check_shapes(as_policy(p_k).probs, as_policy(p_star).probs, rho=as_rho(rho).probs)
    return kl_regularized_update(p_k, sign_reward(p_star, p_k, r_max), beta)


def contraction_check_spin(history, p_star, beta: float, rho=None):
    """[(k, KL(pi*||pi^{k+1}), (1 - 1/beta) KL(pi*||pi^k))] along a policy sequence."""
    ps = as_policy(p_star)
    rho_p = _uniform_rho(ps.shape[0]) if rho is None else as_rho(rho).probs
    kl = [divergence(_KL, ps, p, rho_p) for p in history]
    return [(k, kl[k + 1], (1.0 - 1.0 / beta) * kl[k]) for k in range(len(kl) - 1)]


# ---------------------------------------------------------------------- SPPO


def sppo_loss(pi, p_k, oracle: PreferenceOracle, rho, beta: float, c: float = 1.0) -> float:
    """E_{rho, pi^k}[(log(pi/pi^k) - (w^k - 1/2) / (c beta))^2]."""
    l, pk, rho_p = _log_ratio(pi, p_k, rho)
    t = (oracle.win_rate(pk) - 0.5) / (c * beta)
    return float(np.sum(rho_p[:, None] * pk * (l - t) ** 2))


def sppo_gradient(pi, p_k, oracle: PreferenceOracle, rho, beta: float, c: float = 1.0) -> np.ndarray:
    pi = _with_logits(pi)
    l, pk, rho_p = _log_ratio(pi, p_k, rho)
    t = (oracle.win_rate(pk) - 0.5) / (c * beta)
    return _through_softmax(2.0 * rho_p[:, None] * pk * (l - t), pi)


def sppo_ail_objective(pi, p_k, oracle: PreferenceOracle, rho, beta: float, c: float = 1.0) -> float:
    """E_rho[E_{pi+} dr - E_{pi-} dr - c E_{pi+} dr^2 - c E_{pi-} dr^2] with dr = beta log(pi/pi^k).

    pi+ and pi- reweight pi^k by w^k and 1 - w^k, so the penalty is c E_{pi^k}[dr^2].
    """
    l, pk, rho_p = _log_ratio(pi, p_k, rho)
    w = oracle.win_rate(pk)
    dr = beta * l
    plus, minus = pk * w, pk * (1.0 - w)
    val = plus * dr - minus * dr - c * (plus + minus) * dr * dr
    return float(np.sum(rho_p[:, None] * val))


def sppo_ail_gradient(pi, p_k, oracle: PreferenceOracle, rho, beta: float, c: float = 1.0) -> np.ndarray:
    pi = _with_logits(pi)
    l, pk, rho_p = _log_ratio(pi, p_k, rho)
    w = oracle.win_rate(pk)
    dr = beta * l
    plus, minus = pk * w, pk * (1.0 - w)
    g_dr = plus - minus - 2.0 * c * (plus + minus) * dr
    return _through_softmax(rho_p[:, None] * beta * g_dr, pi)


def sppo_step(
    p_k, oracle: PreferenceOracle, rho, beta: float, inner_steps: int, lr: float, c: float = 1.0, return_trace=False
):
    """One SPPO iteration by gradient descent from log pi^k; the logged dr is beta log(pi/pi^k)."""
    beta = _check_positive("beta", beta)
    pk = PolicyTable(as_policy(p_k).probs).with_logits()

    def loss_and_grad(theta):
        cur = PolicyTable(np.exp(log_softmax(theta)), logits=theta)
        return (
            sppo_loss(cur, pk, oracle, rho, beta, c),
            sppo_gradient(cur, pk, oracle, rho, beta, c),
            float(np.max(np.abs(beta * (cur.log_probs - pk.log_probs)))),
        )

    theta, trace = descend_logits(pk.logits, loss_and_grad, inner_steps, lr, 0)
    nxt = PolicyTable.from_logits(theta)
    return (nxt, trace) if return_trace else nxt


# ---------------------------------------------------------------------- INPO


def _inpo_potential(pi, p_k, config: InpoConfig):
    """a(y) with h(y, y') = a(y) - a(y')."""
    eta, tau = config.eta, config.tau
    a = as_policy(pi).log_probs
    a = a - (tau / eta) * config.p_ref.log_probs - ((eta - tau) / eta) * as_policy(p_k).log_probs
    return a


def _pair_gradient(weight, dfdh):
    """d/da(z) of sum_{y,y'} W(y,y') f(a(y) - a(y')) given W and f'(h) on the pair grid."""
    s = weight * dfdh
    return s.sum(axis=2) - s.sum(axis=1)


def _inpo_setup(pi, p_k, oracle, rho, config):
    pk = as_policy(p_k).probs
    rho_p = as_rho(rho).probs
    check_shapes(as_policy(pi).probs, pk, config.p_ref.probs, rho=rho_p)
    a = _inpo_potential(pi, p_k, config)
    h = a[:, :, None] - a[:, None, :]
    w = oracle.win_rate(pk)
    dw = w[:, :, None] - w[:, None, :]
    weight = rho_p[:, None, None] * pk[:, :, None] * pk[:, None, :]
    return h, dw, weight


def inpo_loss(pi, p_k, oracle: PreferenceOracle, rho, config: InpoConfig) -> float:
    """Paired form E_{(y,y') ~ pi^k x pi^k}[(h - (w(y) - w(y')) / eta)^2]."""
    h, dw, weight = _inpo_setup(pi, p_k, oracle, rho, config)
    return float(np.sum(weight * (h - dw / config.eta) ** 2))


def inpo_gradient(pi, p_k, oracle: PreferenceOracle, rho, config: InpoConfig) -> np.ndarray:
    pi = _with_logits(pi)
    h, dw, weight = _inpo_setup(pi, p_k, oracle, rho, config)
    return _through_softmax(_pair_gradient(weight, 2.0 * (h - dw / config.eta)), pi)


def inpo_displayed_loss(pi, p_k, oracle: PreferenceOracle, rho, config: InpoConfig) -> float:
    """Winner/loser form: y_w, y_l relabel (y, y') by a preference draw; target 1/(2 eta)."""
    h, _, weight = _inpo_setup(pi, p_k, oracle, rho, config)
    p = oracle.table
    t = 1.0 / (2.0 * config.eta)
    # (y, y') kept with probability P(y > y'), swapped otherwise
    return float(np.sum(weight * (p * (h - t) ** 2 + (1.0 - p) * (-h - t) ** 2)))


def inpo_displayed_gradient(pi, p_k, oracle: PreferenceOracle, rho, config: InpoConfig) -> np.ndarray:
    pi = _with_logits(pi)
    h, _, weight = _inpo_setup(pi, p_k, oracle, rho, config)
    p = oracle.table
    t = 1.0 / (2.0 * config.eta)
    dfdh = 2.0 * p * (h - t) - 2.0 * (1.0 - p) * (-h - t)
    return _through_softmax(_pair_gradient(weight, dfdh), pi)


def inpo_ail_objective(pi, p_k, oracle: PreferenceOracle, rho, config: InpoConfig, c: float = 1.0) -> float:
    """E[(w(y) - w(y')) dr - c/2 dr^2] over pi^k x pi^k with dr = eta h."""
    h, dw, weight = _inpo_setup(pi, p_k, oracle, rho, config)
    dr = config.eta * h
    return float(np.sum(weight * (dw * dr - 0.5 * c * dr * dr)))


def inpo_ail_gradient(pi, p_k, oracle: PreferenceOracle, rho, config: InpoConfig, c: float = 1.0) -> np.ndarray:
    pi = _with_logits(pi)
    h, dw, weight = _inpo_setup(pi, p_k, oracle, rho, config)
    eta = config.eta
    dfdh = eta * dw - c * eta * eta * h
    return _through_softmax(_pair_gradient(weight, dfdh), pi)


def inpo_step(p_k, oracle: PreferenceOracle, rho, config: InpoConfig, inner_steps: int, lr: float, return_trace=False):
    """One INPO iteration by gradient descent from log pi^k; the logged dr is eta log(pi/pi^k)."""
    pk = PolicyTable(as_policy(p_k).probs).with_logits()

    def loss_and_grad(theta):
        cur = PolicyTable(np.exp(log_softmax(theta)), logits=theta)
        dr = config.eta * (cur.log_probs - pk.log_probs)
        return (
            inpo_loss(cur, pk, oracle, rho, config),
            inpo_gradient(cur, pk, oracle, rho, config),
            float(np.max(np.abs(dr))),
        )

    theta, trace = descend_logits(pk.logits, loss_and_grad, inner_steps, lr, 0)
    nxt = PolicyTable.from_logits(theta)
    return (nxt, trace) if return_trace else nxt


# ------------------------------------------------------------- iterative DPO


def iterative_dpo_step(p_k, oracle: PreferenceOracle, beta: float, y_ref=0) -> PolicyTable:
    """pi^k(y|x) (P(y > y_ref) / (1 - P(y > y_ref)))^(1/beta), normalized.

    ``y_ref`` is one response index for every context or an array of them.
    """
    if oracle.kind != "bradley_terry":
        raise UnsupportedOracleError("iterative DPO's odds-ratio update needs a Bradley-Terry oracle")
    beta = _check_positive("beta", beta)
    pk = as_policy(p_k)
    check_shapes(pk.probs, np.empty(oracle.shape))
    n_x, n_y = pk.shape
    ref = np.broadcast_to(np.asarray(y_ref, dtype=int), (n_x,))
    if np.any(ref < 0) or np.any(ref >= n_y):
        raise InvalidParameterError(f"y_ref out of range [0, {n_y})")
    p = oracle.table[np.arange(n_x), :, ref]
    log_odds = np.log(p) - np.log1p(-p)
    z = pk.log_probs + log_odds / beta
    return PolicyTable.from_weights(np.exp(z - z.max(axis=1, keepdims=True)))


def contraction_check_dpo(history, p_star, rho=None):
    """[(k, KL(pi*||pi^{k+1}), KL(pi*||pi^k) - KL(pi^{k+1}||pi^k))] along a policy sequence."""
    ps = as_policy(p_star)
    rho_p = _uniform_rho(ps.shape[0]) if rho is None else as_rho(rho).probs
    out = []
    for k in range(len(history) - 1):
        cur, nxt = history[k], history[k + 1]
        lhs = divergence(_KL, ps, nxt, rho_p)
        rhs = divergence(_KL, ps, cur, rho_p) - divergence(_KL, nxt, cur, rho_p)
        out.append((k, lhs, rhs))
    return out


def dpo_kl_identity(p_k, p_next, p_star, oracle: PreferenceOracle, beta: float, rho=None):
    """Both sides of the exact one-step KL identity for the tilted update.

    KL(pi*||pi^{k+1}) = KL(pi*||pi^k) - KL(pi^{k+1}||pi^k) - (E_{pi*} r* - E_{pi^{k+1}} r*) / beta,

    valid per context for any pi^{k+1} proportional to pi^k exp(r*/beta).
    """
    ps = as_policy(p_star)
    rho_p = _uniform_rho(ps.shape[0]) if rho is None else as_rho(rho).probs
    r = oracle.latent_reward.values
    lhs = per_context_divergence(_KL, ps, p_next)
    gain = ((ps.probs - as_policy(p_next).probs) * r).sum(axis=1)
    rhs = per_context_divergence(_KL, ps, p_k) - per_context_divergence(_KL, p_next, p_k) - gain / beta
    return float(np.sum(rho_p * lhs)), float(np.sum(rho_p * rhs))


# ------------------------------------------------------------------- helpers


def _with_logits(pi) -> PolicyTable:
    pi = as_policy(pi)
    if pi.logits is None:
        raise InvalidParameterError("the policy must carry logits")
    return pi


def _log_ratio(pi, p_k, rho):
    a = as_policy(pi)
    b = as_policy(p_k)
    rho_p = as_rho(rho).probs
    check_shapes(a.probs, b.probs, rho=rho_p)
    return a.log_probs - b.log_probs, b.probs, rho_p


def _through_softmax(g_l, pi: PolicyTable) -> np.ndarray:
    probs = np.exp(log_softmax(pi.logits))
    return g_l - probs * g_l.sum(axis=1, keepdims=True)
