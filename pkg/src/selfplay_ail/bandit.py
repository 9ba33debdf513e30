"""Finite contextual bandits: spaces, prompt distributions, policy and reward tables.

Everything here is an immutable value.  Arrays held by the dataclasses are
copied on construction and marked read-only, so tables can be shared freely
between concurrent runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DimensionError, DomainError, InvalidParameterError

PROB_FLOOR = 1e-12
ROW_SUM_TOL = 1e-12
LOGIT_TOL = 1e-10
MAX_SEED = 2**64 - 1

SeedLike = Union[int, np.random.Generator]


def make_rng(seed: SeedLike, *stream: int) -> np.random.Generator:
    """Return a generator for ``seed``; extra ints select an independent sub-stream."""
    if isinstance(seed, np.random.Generator):
        if stream:
            raise InvalidParameterError("sub-streams need an integer seed")
        return seed
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    if stream:
        return np.random.default_rng([seed, *[int(s) for s in stream]])
    return np.random.default_rng(seed)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def floor_and_normalize(weights: np.ndarray, floor: float = PROB_FLOOR) -> np.ndarray:
    """Normalize non-negative rows, clamp entries to ``floor`` and renormalize."""
    w = np.asarray(weights, dtype=float)
    p = w / w.sum(axis=1, keepdims=True)
    p = np.maximum(p, floor)
    p = p / p.sum(axis=1, keepdims=True)
    # renormalizing nudges floored entries a hair below the floor; the sum error
    # from re-clamping is far below machine epsilon
    return np.maximum(p, floor)


@dataclass(frozen=True)
class BanditSpace:
    n_contexts: int
    n_responses: int

    def __post_init__(self):
        if int(self.n_contexts) < 1:
            raise InvalidParameterError("n_contexts must be >= 1")
        if int(self.n_responses) < 2:
            raise InvalidParameterError("n_responses must be >= 2")

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.n_contexts), int(self.n_responses))


@dataclass(frozen=True, eq=False)
class ContextDistribution:
    """The prompt distribution rho(x)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise DimensionError("context distribution must be a non-empty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise DomainError("context probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > ROW_SUM_TOL:
            raise DomainError(f"context probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", _frozen(p))

    @classmethod
    def uniform(cls, n_contexts: int) -> ContextDistribution:
        return cls(np.full(int(n_contexts), 1.0 / int(n_contexts)))

    @property
    def n_contexts(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """A row-stochastic table pi(y|x), optionally carrying the logits it came from.

    Construct directly only from already-normalized probabilities.  Use
    :meth:`from_weights` or :meth:`from_logits` after an update; both apply the
    probability floor so log-ratios stay finite.
    """

    probs: np.ndarray
    logits: np.ndarray | None = None

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2:
            raise DimensionError(f"policy table must be 2-D, got shape {p.shape}")
        if p.shape[0] < 1 or p.shape[1] < 2:
            raise DimensionError(f"policy table needs >=1 context and >=2 responses, got {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise DomainError("policy probabilities must be finite and non-negative")
        sums = p.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
            raise DomainError(f"policy rows must sum to 1 (max error {np.abs(sums - 1).max():.3e})")
        object.__setattr__(self, "probs", _frozen(p))
        if self.logits is not None:
            z = np.array(self.logits, dtype=float)
            if z.shape != p.shape:
                raise DimensionError(f"logits shape {z.shape} != probs shape {p.shape}")
            if not np.all(np.isfinite(z)):
                raise DomainError("logits must be finite")
            if np.max(np.abs(np.exp(log_softmax(z)) - p)) > LOGIT_TOL:
                raise DomainError("probs do not match softmax(logits)")
            object.__setattr__(self, "logits", _frozen(z))

    @classmethod
    def from_weights(cls, weights, floor: float = PROB_FLOOR) -> PolicyTable:
        w = np.asarray(weights, dtype=float)
        if w.ndim != 2:
            raise DimensionError(f"weights must be 2-D, got shape {w.shape}")
        return cls(floor_and_normalize(w, floor))

    @classmethod
    def from_logits(cls, logits, floor: float = PROB_FLOOR) -> PolicyTable:
        z = np.asarray(logits, dtype=float)
        if z.ndim != 2:
            raise DimensionError(f"logits must be 2-D, got shape {z.shape}")
        p = np.exp(log_softmax(z))
        return cls(floor_and_normalize(p, floor), logits=z)

    @classmethod
    def uniform(cls, space: BanditSpace) -> PolicyTable:
        n_x, n_y = space.shape
        return cls(np.full((n_x, n_y), 1.0 / n_y))

    @classmethod
    def one_hot(cls, indices, n_responses: int) -> PolicyTable:
        idx = np.asarray(indices, dtype=int)
        p = np.zeros((idx.size, int(n_responses)))
        p[np.arange(idx.size), idx] = 1.0
        return cls(p)

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape

    @property
    def space(self) -> BanditSpace:
        return BanditSpace(*self.probs.shape)

    @property
    def log_probs(self) -> np.ndarray:
        if self.logits is not None:
            return log_softmax(self.logits)
        with np.errstate(divide="ignore"):
            return np.log(self.probs)

    def with_logits(self) -> PolicyTable:
        """Same distribution, parameterized by ``log(probs)`` as logits."""
        if self.logits is not None:
            return self
        return PolicyTable(self.probs, logits=np.log(np.maximum(self.probs, PROB_FLOOR)))


@dataclass(frozen=True, eq=False)
class RewardTable:
    """A reward r(x, y) with a declared bound ``|r| <= r_max_bound``."""

    values: np.ndarray
    r_max_bound: float = float("inf")

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise DimensionError(f"reward table must be 2-D, got shape {v.shape}")
        bound = float(self.r_max_bound)
        if not bound >= 0:
            raise InvalidParameterError("r_max_bound must be non-negative")
        if np.any(np.abs(v) > bound * (1 + 1e-12)):
            raise DomainError(f"reward entries exceed the bound {bound}")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "r_max_bound", bound)

    @classmethod
    def zeros(cls, shape, r_max_bound: float = float("inf")) -> RewardTable:
        return cls(np.zeros(shape), r_max_bound)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def as_policy(pi) -> PolicyTable:
    return pi if isinstance(pi, PolicyTable) else PolicyTable(pi)


def as_rho(rho) -> ContextDistribution:
    return rho if isinstance(rho, ContextDistribution) else ContextDistribution(rho)


def reward_values(r) -> np.ndarray:
    if isinstance(r, RewardTable):
        return r.values
    v = np.asarray(r, dtype=float)
    if v.ndim != 2:
        raise DimensionError(f"reward table must be 2-D, got shape {v.shape}")
    return v


def check_shapes(*tables: np.ndarray, rho: np.ndarray | None = None) -> None:
    shape = tables[0].shape
    for t in tables[1:]:
        if t.shape != shape:
            raise DimensionError(f"shape mismatch: {t.shape} vs {shape}")
    if rho is not None and rho.shape[0] != shape[0]:
        raise DimensionError(f"rho has {rho.shape[0]} contexts, tables have {shape[0]}")


def random_policy(space: BanditSpace, concentration: float, seed: SeedLike) -> PolicyTable:
    """Draw each row from a symmetric Dirichlet(concentration)."""
    if not concentration > 0:
        raise InvalidParameterError(f"concentration must be positive, got {concentration}")
    rng = make_rng(seed)
    n_x, n_y = space.shape
    rows = rng.dirichlet(np.full(n_y, float(concentration)), size=n_x)
    return PolicyTable.from_weights(rows)


def expected_value(rho, pi, f) -> float:
    """sum_x rho(x) sum_y pi(y|x) f(x, y), accumulated in extended precision."""
    rho_p = as_rho(rho).probs
    p = as_policy(pi).probs
    v = reward_values(f)
    check_shapes(p, v, rho=rho_p)
    ld = np.longdouble
    inner = (p.astype(ld) * v.astype(ld)).sum(axis=1)
    return float((rho_p.astype(ld) * inner).sum())


def sample_response(pi, x: int, seed: SeedLike, size: int | None = None):
    """Draw y ~ pi(.|x).  Returns an int, or an array when ``size`` is given."""
    p = as_policy(pi).probs
    if not 0 <= int(x) < p.shape[0]:
        raise IndexError(f"context {x} out of range [0, {p.shape[0]})")
    rng = make_rng(seed)
    draw = rng.choice(p.shape[1], size=size, p=p[int(x)])
    return int(draw) if size is None else draw


def sample_pairs(pi, rho, n: int, seed: SeedLike) -> np.ndarray:
    """Draw ``n`` (x, y) pairs with x ~ rho and y ~ pi(.|x); shape (n, 2)."""
    p = as_policy(pi).probs
    rho_p = as_rho(rho).probs
    rng = make_rng(seed)
    xs = rng.choice(rho_p.shape[0], size=int(n), p=rho_p)
    # inverse-CDF per row keeps one uniform draw per pair
    cdf = np.cumsum(p, axis=1)
    u = rng.random(int(n)) * cdf[xs, -1]
    ys = (u[:, None] >= cdf[xs]).sum(axis=1)
    ys = np.minimum(ys, p.shape[1] - 1)
    return np.stack([xs, ys], axis=1)
