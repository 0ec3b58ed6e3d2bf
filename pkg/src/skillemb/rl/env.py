"""Toy block-world environment driven by effector velocity commands.

The "joint angles" of the agent are the effector position. Rendering is a
pure function of the state, and ``step`` is deterministic.
"""

from __future__ import annotations

import numpy as np

from .. import scene
from ..dataio import DataError, Demonstration


class ToyEnv:
    def __init__(self, initial_state: scene.SceneState, image_size: int = 64,
                 max_speed: float = 0.4, horizon: int = 64):
        self.initial_state = initial_state.copy()
        self.image_size = image_size
        self.max_speed = max_speed
        self.horizon = horizon
        self._state = initial_state.copy()
        self.t = 0

    @property
    def state(self) -> scene.SceneState:
        return self._state

    @property
    def joint_angles(self) -> np.ndarray:
        return self._state.eff.copy()

    def reset(self, state: scene.SceneState | None = None, t: int = 0) -> scene.SceneState:
        self._state = (state if state is not None else self.initial_state).copy()
        self.t = int(t)
        return self._state

    def step(self, action) -> scene.SceneState:
        self._state = scene.step(self._state, action, self.max_speed)
        self.t += 1
        return self._state

    def render(self, view: int = 0) -> np.ndarray:
        return scene.render(self._state, view, self.image_size)


def env_for_demo(demo: Demonstration, image_size: int | None = None, max_speed: float = 0.4,
                 slack: int = 8) -> ToyEnv:
    return ToyEnv(demo.scene_state(0), image_size or demo.views.shape[2], max_speed,
                  demo.num_frames - 1 + slack)


def reset_along_demonstration(env: ToyEnv, demonstration: Demonstration,
                              rng: np.random.Generator) -> int:
    """Put ``env`` in the demo state at a uniformly drawn timestep; returns the timestep."""
    if demonstration.states is None or demonstration.colors is None:
        raise DataError(f"{demonstration.demo_id}: demonstration has no state annotations")
    t = int(rng.integers(0, demonstration.num_frames))
    env.reset(demonstration.scene_state(t), t)
    return t


def early_terminate(env_state: scene.SceneState, demo_state: scene.SceneState,
                    threshold: float) -> bool:
    """True when the effector is strictly farther than ``threshold`` from the demo's."""
    return bool(np.linalg.norm(np.asarray(env_state.eff) - np.asarray(demo_state.eff)) > threshold)
