"""Chi-square least-squares self-play objective and its gradient-descent trainer.

The policy is parameterized by per-context logits.  With ``l = log(pi / pi^k)``
and ``dr = beta * l`` the exact loss is

    alpha E_{rho,pi*}[(dr - r_max)^2] + (1 - alpha) E_{rho,pi^k}[(dr - r_min)^2] + reg,

where ``r_max = 1/(2 c alpha)``, ``r_min = -1/(2 c (1 - alpha))`` and ``reg`` is
either ``zeta/2 E_{rho,(pi*+pi^k)/2}[l^2]`` (the union-dataset form used for
training) or ``zeta/2 E_{rho,pi*}[dr^2]`` (the expert-measure form).

Both the exact and the sampled loss reduce to one weighted least-squares
problem over cell measures, so they share a single loss/gradient kernel.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .bandit import (
    PolicyTable,
    RewardTable,
    as_policy,
    as_rho,
    check_shapes,
    log_softmax,
    make_rng,
    sample_pairs,
)
from .divergences import DivergenceKind, divergence
from .errors import DimensionError, InvalidParameterError, TrainingDivergenceError
from .game import IterateHistory, game_value

_KL = DivergenceKind.KL()


class BregmanForm(str, enum.Enum):
    UNION = "union"
    EXPERT = "expert"


@dataclass(frozen=True)
class SpifLossSpec:
    beta: float
    c: float
    alpha: float = 0.5
    zeta: float = 0.0
    bregman_form: BregmanForm = BregmanForm.UNION

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidParameterError(f"beta must be positive, got {self.beta}")
        if not self.c > 0:
            raise InvalidParameterError(f"c must be positive, got {self.c}")
        if not 0 < self.alpha < 1:
            raise InvalidParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.zeta >= 0:
            raise InvalidParameterError(f"zeta must be non-negative, got {self.zeta}")
        object.__setattr__(self, "bregman_form", BregmanForm(self.bregman_form))

    @property
    def r_max_target(self) -> float:
        return 1.0 / (2.0 * self.c * self.alpha)

    @property
    def r_min_target(self) -> float:
        return -1.0 / (2.0 * self.c * (1.0 - self.alpha))


@dataclass(frozen=True, eq=False)
class SampledDataset:
    """(context, response) index pairs, optionally weighted.

    ``source`` is ``"expert"`` or ``"model"``; ``iteration`` names the model
    iterate that generated a model dataset.
    """

    pairs: np.ndarray
    source: str = "expert"
    iteration: int | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        p = np.array(self.pairs, dtype=np.int64).reshape(-1, 2)
        if p.shape[0] == 0:
            raise InvalidParameterError("dataset is empty")
        if np.any(p < 0):
            raise DimensionError("dataset indices must be non-negative")
        if self.source not in ("expert", "model"):
            raise InvalidParameterError(f"source must be 'expert' or 'model', got {self.source!r}")
        p.setflags(write=False)
        object.__setattr__(self, "pairs", p)
        if self.weights is not None:
            w = np.array(self.weights, dtype=float)
            if w.shape != (p.shape[0],) or np.any(w < 0) or not w.sum() > 0:
                raise InvalidParameterError("weights must be non-negative, one per pair, with positive sum")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.pairs.shape[0]

    def measure(self, shape) -> np.ndarray:
        """Normalized empirical measure over cells."""
        n_x, n_y = shape
        if self.pairs[:, 0].max() >= n_x or self.pairs[:, 1].max() >= n_y:
            raise DimensionError(f"dataset indices out of range for table shape {shape}")
        w = np.ones(len(self)) if self.weights is None else self.weights
        out = np.zeros(shape)
        np.add.at(out, (self.pairs[:, 0], self.pairs[:, 1]), w)
        return out

    @classmethod
    def enumerate(cls, pi, rho, source: str = "expert", iteration: int | None = None) -> SampledDataset:
        """Every cell once, weighted by rho(x) pi(y|x)."""
        p = as_policy(pi).probs
        r = as_rho(rho).probs
        xs, ys = np.meshgrid(np.arange(p.shape[0]), np.arange(p.shape[1]), indexing="ij")
        pairs = np.stack([xs.ravel(), ys.ravel()], axis=1)
        return cls(pairs, source, iteration, (r[:, None] * p).ravel())


def _log_ratio(pi, p_k) -> tuple[np.ndarray, np.ndarray]:
    a = as_policy(pi)
    b = as_policy(p_k)
    check_shapes(a.probs, b.probs)
    return a.log_probs - b.log_probs, b.probs


def _kernel(l, spec: SpifLossSpec, m_star, w_star, m_k, w_k, m_reg, reg_beta: bool):
    """Weighted least-squares loss and its gradient in l = log(pi / pi^k)."""
    b = spec.beta
    dr = b * l
    e_star = dr - spec.r_max_target
    e_k = dr - spec.r_min_target
    reg_scale = b * b if reg_beta else 1.0
    loss = (
        w_star * math.fsum((m_star * e_star * e_star).ravel())
        + w_k * math.fsum((m_k * e_k * e_k).ravel())
        + 0.5 * spec.zeta * reg_scale * math.fsum((m_reg * l * l).ravel())
    )
    grad_l = 2.0 * b * (w_star * m_star * e_star + w_k * m_k * e_k) + spec.zeta * reg_scale * m_reg * l
    return loss, grad_l


def _exact_measures(p_star, p_k_probs, rho, spec: SpifLossSpec):
    ps = as_policy(p_star).probs
    rho_p = as_rho(rho).probs[:, None]
    check_shapes(ps, p_k_probs, rho=rho_p[:, 0])
    m_star = rho_p * ps
    m_k = rho_p * p_k_probs
    if spec.bregman_form is BregmanForm.UNION:
        return m_star, m_k, 0.5 * (m_star + m_k), False
    return m_star, m_k, m_star, True


def spif_loss_exact(pi, p_k, p_star, rho, spec: SpifLossSpec) -> float:
    l, pk = _log_ratio(pi, p_k)
    m_star, m_k, m_reg, reg_beta = _exact_measures(p_star, pk, rho, spec)
    return _kernel(l, spec, m_star, spec.alpha, m_k, 1.0 - spec.alpha, m_reg, reg_beta)[0]


def _sampled_measures(shape, d_star: SampledDataset, d_k: SampledDataset):
    a = d_star.measure(shape)
    b = d_k.measure(shape)
    m_star = a / a.sum()
    m_k = b / b.sum()
    union = (a + b) / (a.sum() + b.sum())
    return m_star, m_k, union


def spif_loss_sampled(pi, p_k, d_star: SampledDataset, d_k: SampledDataset, spec: SpifLossSpec) -> float:
    """Dataset averages with balanced 1/2, 1/2 weights on the two square terms."""
    l, _ = _log_ratio(pi, p_k)
    m_star, m_k, union = _sampled_measures(l.shape, d_star, d_k)
    m_reg, reg_beta = (union, False) if spec.bregman_form is BregmanForm.UNION else (m_star, True)
    return _kernel(l, spec, m_star, 0.5, m_k, 0.5, m_reg, reg_beta)[0]


def _through_softmax(grad_l: np.ndarray, probs: np.ndarray) -> np.ndarray:
    # d l(x, y) / d theta(x, j) = [y == j] - pi(j|x)
    return grad_l - probs * grad_l.sum(axis=1, keepdims=True)


def _require_logits(pi) -> PolicyTable:
    pi = as_policy(pi)
    if pi.logits is None:
        raise InvalidParameterError("the policy must carry logits; use PolicyTable.with_logits()")
    return pi


def spif_gradient(pi, p_k, p_star, rho, spec: SpifLossSpec) -> np.ndarray:
    """Exact gradient of spif_loss_exact with respect to the logits of ``pi``."""
    pi = _require_logits(pi)
    l, pk = _log_ratio(pi, p_k)
    m_star, m_k, m_reg, reg_beta = _exact_measures(p_star, pk, rho, spec)
    _, grad_l = _kernel(l, spec, m_star, spec.alpha, m_k, 1.0 - spec.alpha, m_reg, reg_beta)
    return _through_softmax(grad_l, np.exp(log_softmax(pi.logits)))


def spif_gradient_sampled(pi, p_k, d_star: SampledDataset, d_k: SampledDataset, spec: SpifLossSpec) -> np.ndarray:
    pi = _require_logits(pi)
    l, _ = _log_ratio(pi, p_k)
    m_star, m_k, union = _sampled_measures(l.shape, d_star, d_k)
    m_reg, reg_beta = (union, False) if spec.bregman_form is BregmanForm.UNION else (m_star, True)
    _, grad_l = _kernel(l, spec, m_star, 0.5, m_k, 0.5, m_reg, reg_beta)
    return _through_softmax(grad_l, np.exp(log_softmax(pi.logits)))


@dataclass(frozen=True)
class Exact:
    pass


@dataclass(frozen=True)
class MonteCarlo:
    n: int
    seed: int = 0

    def __post_init__(self):
        if int(self.n) < 1:
            raise InvalidParameterError(f"MonteCarlo needs n >= 1, got {self.n}")


Sampling = Union[Exact, MonteCarlo]


@dataclass(frozen=True)
class SpifConfig:
    iterations: int
    loss: SpifLossSpec
    inner_steps: int = 200
    lr: float = 1.0
    sampling: Sampling = field(default_factory=Exact)

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise InvalidParameterError(f"iterations must be a positive integer, got {self.iterations}")
        if int(self.inner_steps) != self.inner_steps or self.inner_steps < 1:
            raise InvalidParameterError(f"inner_steps must be a positive integer, got {self.inner_steps}")
        if not self.lr > 0:
            raise InvalidParameterError(f"lr must be positive, got {self.lr}")


@dataclass(frozen=True, eq=False)
class StepTrace:
    """Per inner step diagnostics for one self-play iteration (step 0 is the warm start)."""

    loss: np.ndarray
    grad_inf_norm: np.ndarray
    max_abs_dr: np.ndarray


def descend_logits(theta0, loss_and_grad, inner_steps: int, lr: float, iteration: int):
    """Constant-step gradient descent, logging (loss, ||g||_inf, max|dr|) at every iterate."""
    theta = np.array(theta0, dtype=float)
    losses, norms, drs = [], [], []
    for t in range(int(inner_steps) + 1):
        loss, grad, max_dr = loss_and_grad(theta)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingDivergenceError(f"non-finite loss at self-play iteration {iteration}, step {t}", iteration)
        losses.append(loss)
        norms.append(float(np.max(np.abs(grad))))
        drs.append(max_dr)
        if t < inner_steps:
            theta = theta - lr * grad
    return theta, StepTrace(np.array(losses), np.array(norms), np.array(drs))


def spif_train(config: SpifConfig, p_star, p_ref, rho) -> IterateHistory:
    """Self-play loop: each iteration minimizes the chi-square loss from the warm start log pi^k.

    ``history.extras["traces"]`` holds one :class:`StepTrace` per iteration.
    """
    spec = config.loss
    ps = as_policy(p_star)
    rho_d = as_rho(rho)
    pk = PolicyTable(as_policy(p_ref).probs).with_logits()
    check_shapes(ps.probs, pk.probs, rho=rho_d.probs)

    policies, rewards, values, traces = [pk], [], [], []
    kls = [divergence(_KL, ps, pk, rho_d)]
    for k in range(1, int(config.iterations) + 1):
        anchor = pk.log_probs
        if isinstance(config.sampling, MonteCarlo):
            rng_star = make_rng(config.sampling.seed, k, 0)
            rng_k = make_rng(config.sampling.seed, k, 1)
            d_star = SampledDataset(sample_pairs(ps, rho_d, config.sampling.n, rng_star), "expert")
            d_k = SampledDataset(sample_pairs(pk, rho_d, config.sampling.n, rng_k), "model", k)
            m_star, m_k, union = _sampled_measures(pk.shape, d_star, d_k)
            w_star, w_k = 0.5, 0.5
            m_reg, reg_beta = (union, False) if spec.bregman_form is BregmanForm.UNION else (m_star, True)
        else:
            m_star, m_k, m_reg, reg_beta = _exact_measures(ps, pk.probs, rho_d, spec)
            w_star, w_k = spec.alpha, 1.0 - spec.alpha

        def loss_and_grad(theta):
            logp = log_softmax(theta)
            l = logp - anchor
            loss, grad_l = _kernel(l, spec, m_star, w_star, m_k, w_k, m_reg, reg_beta)
            return loss, _through_softmax(grad_l, np.exp(logp)), float(np.max(np.abs(spec.beta * l)))

        theta, trace = descend_logits(pk.logits, loss_and_grad, config.inner_steps, config.lr, k)
        nxt = PolicyTable.from_logits(theta)
        # carry floored probabilities as logits so the next anchor is exact
        nxt = PolicyTable(nxt.probs).with_logits()
        dr = spec.beta * (nxt.log_probs - anchor)
        r = RewardTable(dr, float(np.max(np.abs(dr))))
        rewards.append(r)
        values.append(game_value(pk, r, ps, rho_d))
        policies.append(nxt)
        kls.append(divergence(_KL, ps, nxt, rho_d))
        traces.append(trace)
        pk = nxt
    return IterateHistory(policies, rewards, list(rewards), values, kls, {"traces": traces})
