"""Self-play imitation finetuning on tabular contextual bandits."""

from .bandit import (
    BanditSpace,
    ContextDistribution,
    PolicyTable,
    RewardTable,
    expected_value,
    random_policy,
    sample_pairs,
    sample_response,
)
from .divergences import DivergenceKind, divergence, optimal_mixed_chi2_reward
from .game import GameConfig, Mode, duality_gap, game_value, rate_fit, run_selfplay
from .reward_player import Box, Link, MixedQuadratic, RegularizerSpec, sign_reward
from .spif import Exact, MonteCarlo, SpifConfig, SpifLossSpec, spif_train

__version__ = "0.1.0"

__all__ = [
    "BanditSpace",
    "Box",
    "ContextDistribution",
    "DivergenceKind",
    "Exact",
    "GameConfig",
    "Link",
    "MixedQuadratic",
    "Mode",
    "MonteCarlo",
    "PolicyTable",
    "RegularizerSpec",
    "RewardTable",
    "SpifConfig",
    "SpifLossSpec",
    "divergence",
    "duality_gap",
    "expected_value",
    "game_value",
    "optimal_mixed_chi2_reward",
    "random_policy",
    "rate_fit",
    "run_selfplay",
    "sample_pairs",
    "sample_response",
    "sign_reward",
    "spif_train",
]
