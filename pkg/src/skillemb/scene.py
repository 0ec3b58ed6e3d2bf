"""2D block world shared by the synthetic data generator and the toy RL env.

The world is a side view: a table at ``y = 0`` and square blocks resting on
it or on each other. A point effector moves under a bounded 2D velocity
command. Grasping and releasing are automatic:

* a free-topped block is grasped when the effector comes within reach of its
  top face (the grasp must be re-armed by moving away after every release);
* a held block is released as soon as it is lowered onto a support.

Everything is deterministic. Two fixed affine cameras render the scene.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import render_rects

BLOCK = 0.16
WORKSPACE = (0.0, 1.4, 0.0, 1.0)  # x_min, x_max, y_min, y_max for the effector
CARRY_Y = 0.74
GRASP_DX = 0.06
GRASP_DY_ABOVE = 0.015
GRASP_DY_BELOW = 0.06
REARM_DIST = 0.1
LIFT_MARGIN = 0.02
SLOTS = (0.12, 0.32, 0.52)

PALETTE = np.array(
    [
        [215, 40, 40],  # red
        [40, 170, 60],  # green
        [45, 75, 215],  # blue
        [225, 190, 30],  # yellow
    ],
    dtype=np.uint8,
)
EFFECTOR_COLOR = np.array([60, 60, 60], dtype=np.uint8)

TASKS = ("stack", "color_push", "color_stack", "separate_stack")


@dataclass
class SceneState:
    eff: np.ndarray
    blocks: np.ndarray  # (nb, 2): center x, bottom y
    colors: np.ndarray  # (nb,) palette indices, constant over an episode
    held: int = -1
    armed: bool = True
    offset: float = 0.0  # held block top minus effector y
    lifted: bool = False  # held block has left its support since the grasp

    def copy(self) -> "SceneState":
        return SceneState(self.eff.copy(), self.blocks.copy(), self.colors.copy(),
                          self.held, self.armed, self.offset, self.lifted)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.eff, self.blocks.ravel(),
                               [self.held, float(self.armed), self.offset, float(self.lifted)]])

    @classmethod
    def from_vector(cls, vec, colors) -> "SceneState":
        vec = np.asarray(vec, dtype=np.float64)
        nb = len(colors)
        return cls(vec[:2].copy(), vec[2:2 + 2 * nb].reshape(nb, 2).copy(),
                   np.asarray(colors, dtype=np.int64).copy(),
                   int(round(vec[2 + 2 * nb])), bool(vec[3 + 2 * nb] > 0.5),
                   float(vec[4 + 2 * nb]), bool(vec[5 + 2 * nb] > 0.5))


# ---------------------------------------------------------------------------
# physics


def _overlaps(x_a, x_b):
    return abs(x_a - x_b) < 0.9 * BLOCK


def support_height(state: SceneState, x: float, exclude: int) -> float:
    top = 0.0
    for j, (bx, by) in enumerate(state.blocks):
        if j != exclude and _overlaps(x, bx):
            top = max(top, by + BLOCK)
    return top


def top_is_free(state: SceneState, i: int) -> bool:
    bx, by = state.blocks[i]
    for j, (ox, oy) in enumerate(state.blocks):
        if j != i and _overlaps(bx, ox) and abs(oy - (by + BLOCK)) < 1e-6:
            return False
    return True


def step(state: SceneState, action, max_speed: float) -> SceneState:
    """Advance one tick. ``action`` is clipped to [-1, 1]^2 and scaled by ``max_speed``."""
    s = state.copy()
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    new = s.eff + a * max_speed
    new[0] = min(max(new[0], WORKSPACE[0]), WORKSPACE[1])
    new[1] = min(max(new[1], WORKSPACE[2]), WORKSPACE[3])
    moving_down = new[1] < s.eff[1]
    s.eff = new

    if s.held >= 0:
        i = s.held
        bottom = s.eff[1] + s.offset - BLOCK
        s.blocks[i, 0] = s.eff[0]
        sup = support_height(s, s.eff[0], exclude=i)
        if s.lifted and moving_down and bottom <= sup:
            s.blocks[i, 1] = sup
            s.held = -1
            s.armed = False
            s.offset = 0.0
            s.lifted = False
        else:
            s.blocks[i, 1] = max(bottom, sup)
            if bottom > sup + LIFT_MARGIN:
                s.lifted = True
        return s

    if not s.armed:
        far = True
        for bx, by in s.blocks:
            if math.hypot(s.eff[0] - bx, s.eff[1] - (by + BLOCK)) < REARM_DIST:
                far = False
                break
        s.armed = far
        return s

    best, best_d = -1, np.inf
    for i, (bx, by) in enumerate(s.blocks):
        top = by + BLOCK
        dx = abs(s.eff[0] - bx)
        if dx < GRASP_DX and top - GRASP_DY_BELOW <= s.eff[1] <= top + GRASP_DY_ABOVE:
            if top_is_free(s, i):
                d = math.hypot(dx, s.eff[1] - top)
                if d < best_d:
                    best, best_d = i, d
    if best >= 0:
        s.held = best
        s.offset = s.blocks[best, 1] + BLOCK - s.eff[1]
        s.lifted = False
    return s


# ---------------------------------------------------------------------------
# cameras and rendering


@dataclass(frozen=True)
class Camera:
    center: tuple
    scale: float  # fraction of the default zoom
    angle_deg: float
    mirror: bool
    background: tuple
    table: tuple
    shade: float

    def forward(self, size: int) -> np.ndarray:
        """3x3 world -> pixel affine matrix."""
        px_per_unit = self.scale * size / 1.5
        sx = -px_per_unit if self.mirror else px_per_unit
        t = math.radians(self.angle_deg)
        c, s_ = math.cos(t), math.sin(t)
        to_center = np.array([[1, 0, -self.center[0]], [0, 1, -self.center[1]], [0, 0, 1.0]])
        scale = np.diag([sx, -px_per_unit, 1.0])  # image v grows downwards
        rot = np.array([[c, -s_, 0], [s_, c, 0], [0, 0, 1.0]])
        to_pix = np.array([[1, 0, size / 2], [0, 1, size / 2], [0, 0, 1.0]])
        return to_pix @ rot @ scale @ to_center

    def inverse(self, size: int) -> np.ndarray:
        return np.linalg.inv(self.forward(size))[:2]


CAMERAS = (
    Camera(center=(0.7, 0.5), scale=1.0, angle_deg=0.0, mirror=False,
           background=(205, 215, 225), table=(120, 95, 70), shade=1.0),
    Camera(center=(0.72, 0.45), scale=0.92, angle_deg=9.0, mirror=True,
           background=(230, 220, 195), table=(90, 90, 100), shade=0.8),
)


def scene_rects(state: SceneState):
    rects = [[-2.0, -2.0, 3.0, 0.0]]  # table, recolored per view
    colors = [None]
    for (bx, by), c in zip(state.blocks, state.colors):
        rects.append([bx - BLOCK / 2, by, bx + BLOCK / 2, by + BLOCK])
        colors.append(PALETTE[c])
    ex, ey = state.eff
    rects.append([ex - 0.1, ey, ex + 0.1, ey + 0.045])  # gripper plate
    rects.append([ex - 0.03, ey + 0.045, ex + 0.03, ey + 0.2])  # rod
    colors.extend([EFFECTOR_COLOR, EFFECTOR_COLOR])
    return np.array(rects, dtype=np.float64), colors


def render(state: SceneState, view: int, size: int) -> np.ndarray:
    """Rasterize ``state`` from camera ``view`` into a ``size x size x 3`` uint8 frame."""
    cam = CAMERAS[view]
    rects, colors = scene_rects(state)
    colors[0] = np.array(cam.table, dtype=np.uint8)
    shaded = [np.clip(np.asarray(c, dtype=np.float64) * (cam.shade if k > 0 else 1.0), 0, 255)
              for k, c in enumerate(colors)]
    return render_rects(cam.background, rects, np.array(shaded, dtype=np.uint8),
                        cam.inverse(size), size)


# ---------------------------------------------------------------------------
# scripted demonstrations


@dataclass
class Op:
    """Pick block ``block`` and put it at ``x``, on block ``onto`` or on the table."""

    block: int
    x: float | None = None
    onto: int | None = None


@dataclass
class Episode:
    states: list = field(default_factory=list)

    def vectors(self) -> np.ndarray:
        return np.stack([s.to_vector() for s in self.states])


def _waypoints(state: SceneState, op: Op):
    bx, by = state.blocks[op.block]
    if op.onto is not None:
        tx = state.blocks[op.onto, 0]
        sup = state.blocks[op.onto, 1] + BLOCK
    else:
        tx = op.x
        sup = 0.0
    return [
        (bx, CARRY_Y), (bx, by + BLOCK), (bx, CARRY_Y),
        (tx, CARRY_Y), (tx, sup + BLOCK - 0.01), (tx, CARRY_Y),
    ]


def run_script(state: SceneState, ops, speed: float, max_speed: float,
               hold: int = 3) -> Episode:
    """Drive the effector through each op's waypoints at constant ``speed``."""
    ep = Episode([state.copy()])
    s = state.copy()
    for op in ops:
        for wp in _waypoints(s, op):
            wp = np.asarray(wp, dtype=np.float64)
            for _ in range(10_000):
                delta = wp - s.eff
                dist = float(np.hypot(*delta))
                if dist < 1e-9:
                    break
                move = delta if dist <= speed else delta * (speed / dist)
                s = step(s, move / max_speed, max_speed)
                ep.states.append(s.copy())
            else:  # pragma: no cover
                raise RuntimeError("scripted controller did not converge")
    for _ in range(hold):
        s = step(s, np.zeros(2), max_speed)
        ep.states.append(s.copy())
    return ep


def path_length(state: SceneState, ops) -> float:
    ep = run_script(state, ops, speed=0.005, max_speed=1.0, hold=0)
    eff = np.array([s.eff for s in ep.states])
    return float(np.linalg.norm(np.diff(eff, axis=0), axis=1).sum())


def _random_xs(rng, n, lo, hi, gap):
    for _ in range(1000):
        xs = rng.uniform(lo, hi, size=n)
        if n == 1 or np.min(np.diff(np.sort(xs))) >= gap:
            return xs
    raise RuntimeError("could not place blocks")  # pragma: no cover


def _start_effector(rng):
    return np.array([rng.uniform(0.5, 0.9), rng.uniform(0.85, 0.95)])


def initial_scene(task: str, rng: np.random.Generator):
    """Random start state and the successful op sequence for ``task``."""
    if task == "stack":
        colors = rng.choice(3, size=2, replace=False)
        xs = _random_xs(rng, 2, 0.12, 1.28, 0.35)
        blocks = np.stack([xs, np.zeros(2)], axis=1)
        mover = int(rng.integers(2))
        ops = [Op(block=mover, onto=1 - mover)]
    elif task in ("color_push", "color_stack"):
        colors = rng.permutation(3)
        xs = _random_xs(rng, 3, 0.72, 1.3, 0.2)
        blocks = np.stack([xs, np.zeros(3)], axis=1)
        order = [int(np.where(colors == c)[0][0]) for c in range(3)]
        if task == "color_push":
            ops = [Op(block=order[c], x=SLOTS[c]) for c in range(3)]
        else:
            ops = [Op(block=order[0], x=SLOTS[1]), Op(block=order[1], onto=order[0]),
                   Op(block=order[2], onto=order[1])]
    elif task == "separate_stack":
        colors = rng.choice(3, size=2, replace=False)
        xs = _random_xs(rng, 2, 0.15, 1.25, 0.35)
        blocks = np.array([[xs[0], BLOCK], [xs[0], 0.0]])
        ops = [Op(block=0, x=float(xs[1])), Op(block=1, onto=0)]
    else:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    state = SceneState(_start_effector(rng), blocks.astype(np.float64),
                       np.asarray(colors, dtype=np.int64))
    return state, ops


def sabotage(ops, state: SceneState, rng):
    """Replace the final placement by a table drop away from its target."""
    ops = list(ops)
    last = ops[-1]
    if last.onto is not None:
        target = state.blocks[last.onto, 0]
    else:
        target = last.x
    shift = rng.uniform(0.3, 0.45) * (1 if target < 0.7 else -1)
    ops[-1] = Op(block=last.block, x=float(np.clip(target + shift, 0.1, 1.3)))
    return ops


def _on(state, a, b):
    (ax, ay), (bx, by) = state.blocks[a], state.blocks[b]
    return abs(ax - bx) < 0.5 * BLOCK and abs(ay - (by + BLOCK)) < 1e-6


def goal_reached(task: str, state: SceneState, initial: SceneState) -> bool:
    """Task predicate on the final scene; ``initial`` identifies which block moved."""
    if state.held >= 0:
        return False
    if task == "stack":
        return _on(state, 0, 1) or _on(state, 1, 0)
    order = [int(np.where(state.colors == c)[0][0]) for c in range(3)] if len(state.colors) == 3 else []
    if task == "color_push":
        return all(abs(state.blocks[order[c], 0] - SLOTS[c]) < 0.05
                   and abs(state.blocks[order[c], 1]) < 1e-6 for c in range(3))
    if task == "color_stack":
        return (abs(state.blocks[order[0], 1]) < 1e-6 and _on(state, order[1], order[0])
                and _on(state, order[2], order[1]))
    if task == "separate_stack":
        return _on(state, 1, 0) and _on(initial, 0, 1)
    raise ValueError(f"unknown task {task!r}")


def scripted_episode(task: str, rng: np.random.Generator, success: bool,
                     target_steps: int, max_speed: float, hold: int = 3,
                     speed_jitter: float = 0.1) -> Episode:
    """One demonstration whose motion takes about ``target_steps`` ticks."""
    for _ in range(100):
        state, ops = initial_scene(task, rng)
        if not success:
            ops = sabotage(ops, state, rng)
        length = path_length(state, ops)
        speed = length / target_steps * rng.uniform(1 - speed_jitter, 1 + speed_jitter)
        if speed > max_speed:
            raise ValueError(f"task {task} needs speed {speed:.3f} > max_speed {max_speed}")
        ep = run_script(state, ops, speed, max_speed, hold=hold)
        if goal_reached(task, ep.states[-1], state) == success:
            return ep
    raise RuntimeError(f"could not script a {'successful' if success else 'failed'} {task} demo")
