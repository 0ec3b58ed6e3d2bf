"""Per-timestep rewards for imitation from a single demonstration.

The embedding reward compares the agent's frame at step ``t`` with the
demonstration frame at ``t`` (clamped at the last frame) seen from the
other camera: ``bonus - d`` when the distance ``d < xi_reward``, else 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import dataio
from ..encoder import Encoder, embed_sequence


@dataclass
class RewardSpec:
    demo_embeddings: np.ndarray  # (F, n)
    xi_reward: float
    bonus: float = 10.0

    def __post_init__(self):
        self.demo_embeddings = np.asarray(self.demo_embeddings, dtype=np.float64)
        if not self.xi_reward > 0:
            raise ValueError(f"xi_reward must be positive, got {self.xi_reward}")

    def target(self, t) -> np.ndarray:
        idx = np.minimum(np.asarray(t), len(self.demo_embeddings) - 1)
        return self.demo_embeddings[idx]


def embedding_reward(agent_embedding, demo_embedding, spec: RewardSpec):
    """Scalar or batched (last axis is the embedding) reward."""
    a = np.asarray(agent_embedding, dtype=np.float64)
    b = np.asarray(demo_embedding, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"embedding sizes differ: {a.shape[-1]} != {b.shape[-1]}")
    d = np.linalg.norm(a - b, axis=-1)
    r = np.where(d < spec.xi_reward, spec.bonus - d, 0.0)
    return float(r) if r.ndim == 0 else r


def calibrate_xi(view_a, view_b, percentile: float = 90.0, cap: float = 10.0) -> float:
    """Percentile of same-timestep cross-view distances, capped so rewards stay >= 0."""
    d = np.linalg.norm(np.asarray(view_a, dtype=np.float64) - np.asarray(view_b, dtype=np.float64),
                       axis=-1)
    xi = float(np.percentile(d, percentile))
    if not xi > 0:
        xi = 1e-6
    return min(xi, cap)


class EmbeddingReward:
    """Reward from a frozen encoder; also provides the agent's observation embedding."""

    uses_embedding = True

    def __init__(self, encoder: Encoder, demo: dataio.Demonstration, agent_view: int = 0,
                 demo_view: int = 1, xi_reward: float = 0.0, percentile: float = 90.0,
                 bonus: float = 10.0):
        self.encoder = encoder
        demo_emb = embed_sequence(encoder, dataio.normalize(demo.views[demo_view]))
        if xi_reward <= 0:
            agent_side = embed_sequence(encoder, dataio.normalize(demo.views[agent_view]))
            xi_reward = calibrate_xi(agent_side, demo_emb, percentile, cap=bonus)
        self.spec = RewardSpec(demo_emb, xi_reward, bonus)

    def __call__(self, embeddings, states, t) -> np.ndarray:
        return embedding_reward(embeddings, self.spec.target(t), self.spec)


class OracleReward:
    """Ground-truth effector tracking: ``bonus * (1 - d / scale)`` clipped at 0."""

    def __init__(self, demo: dataio.Demonstration, bonus: float = 10.0, scale: float = 0.3):
        self.eff = np.stack([demo.scene_state(t).eff for t in range(demo.num_frames)])
        self.bonus, self.scale = bonus, scale

    def __call__(self, embeddings, states, t) -> np.ndarray:
        idx = np.minimum(np.asarray(t), len(self.eff) - 1)
        eff = np.stack([s.eff for s in states])
        d = np.linalg.norm(eff - self.eff[idx], axis=-1)
        return np.clip(self.bonus * (1.0 - d / self.scale), 0.0, None)


class ZeroReward:
    def __call__(self, embeddings, states, t) -> np.ndarray:
        return np.zeros(len(states))
