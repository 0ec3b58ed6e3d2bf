"""Embedding rewards and PPO on the toy block world."""

from .env import ToyEnv, early_terminate, env_for_demo, reset_along_demonstration
from .ppo import (GaussianPolicy, PPODivergedError, PPOResult, evaluate_goal, mann_kendall,
                  phase_features, ppo_train)
from .reward import (EmbeddingReward, OracleReward, RewardSpec, ZeroReward, calibrate_xi,
                     embedding_reward)

__all__ = ["ToyEnv", "early_terminate", "env_for_demo", "reset_along_demonstration",
           "GaussianPolicy", "PPODivergedError", "PPOResult", "evaluate_goal", "mann_kendall",
           "phase_features", "ppo_train",
           "EmbeddingReward", "OracleReward", "RewardSpec", "ZeroReward", "calibrate_xi",
           "embedding_reward"]
