"""The default desk-scale bandit instance and random-instance helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..bandit import BanditSpace, ContextDistribution, PolicyTable, make_rng, random_policy

DEFAULT_CONTEXTS = 4
DEFAULT_RESPONSES = 8
DEFAULT_CONCENTRATION = 0.5


@dataclass(frozen=True, eq=False)
class Instance:
    p_star: PolicyTable
    p_ref: PolicyTable
    rho: ContextDistribution

    @property
    def space(self) -> BanditSpace:
        return self.p_star.space


def default_instance(
    seed: int,
    n_contexts: int = DEFAULT_CONTEXTS,
    n_responses: int = DEFAULT_RESPONSES,
    concentration: float = DEFAULT_CONCENTRATION,
    reference: str = "uniform",
) -> Instance:
    """Dirichlet expert, uniform rho; the reference is uniform or a Dirichlet(1) draw."""
    space = BanditSpace(n_contexts, n_responses)
    p_star = random_policy(space, concentration, make_rng(seed, 0))
    if reference == "uniform":
        p_ref = PolicyTable.uniform(space)
    elif reference == "random":
        p_ref = random_policy(space, 1.0, make_rng(seed, 1))
    else:
        raise ValueError(f"unknown reference {reference!r}")
    return Instance(p_star, p_ref, ContextDistribution.uniform(n_contexts))


def random_pair(rng: np.random.Generator, max_contexts: int = 4, max_responses: int = 6, concentration=None):
    """A random (p_star, p, rho) triple of random shape; rows are floored Dirichlet draws."""
    n_x = int(rng.integers(1, max_contexts + 1))
    n_y = int(rng.integers(2, max_responses + 1))
    conc = float(rng.choice([0.3, 1.0, 3.0])) if concentration is None else concentration
    p_star = PolicyTable.from_weights(rng.dirichlet(np.full(n_y, conc), size=n_x))
    p = PolicyTable.from_weights(rng.dirichlet(np.full(n_y, conc), size=n_x))
    rho = ContextDistribution(rng.dirichlet(np.ones(n_x)))
    return p_star, p, rho
