"""Multi-view demonstration data: disk I/O, synthetic generation, augmentation
and batch sampling.

On-disk layout (lossless PNG frames)::

    <root>/<split>/<task_name>/<demo_id>/view0/frame_000000.png
                                        /view1/frame_000000.png
                                        /meta.json      {"success": true, "fps": 10, ...}
                                        /state.npz      optional ground-truth scene states

Task names are only used for grouping and evaluation splits; nothing sampled
for training depends on them.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import scene

log = logging.getLogger(__name__)

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)
SPLITS = ("train", "validation", "test")


class DataError(RuntimeError):
    """Dataset missing or malformed."""


class DemoError(DataError):
    def __init__(self, demo_id: str, message: str):
        super().__init__(f"{demo_id}: {message}")
        self.demo_id = demo_id


class SamplingError(RuntimeError):
    """The dataset cannot satisfy the requested batch structure."""


@dataclass
class Demonstration:
    views: np.ndarray  # (2, F, H, W, 3) uint8
    task_name: str
    success: bool
    demo_id: str
    fps: int = 10
    states: np.ndarray | None = None  # (F, state_dim) scene vectors
    colors: np.ndarray | None = None

    def __post_init__(self):
        if self.views.ndim != 5 or self.views.shape[0] != 2:
            raise DemoError(self.demo_id, f"expected 2 views, got array {self.views.shape}")
        if self.views.shape[1] < 2:
            raise DemoError(self.demo_id, "a demonstration needs at least 2 frames")

    @property
    def num_frames(self) -> int:
        return self.views.shape[1]

    def scene_state(self, t: int) -> scene.SceneState:
        if self.states is None or self.colors is None:
            raise DataError(f"{self.demo_id}: demonstration has no state annotations")
        return scene.SceneState.from_vector(self.states[t], self.colors)


@dataclass
class MultiTaskDataset:
    demonstrations: list = field(default_factory=list)
    split: str = "train"

    @property
    def tasks(self) -> set:
        return {d.task_name for d in self.demonstrations}

    def __len__(self):
        return len(self.demonstrations)

    def select_tasks(self, tasks) -> "MultiTaskDataset":
        tasks = set(tasks)
        return MultiTaskDataset([d for d in self.demonstrations if d.task_name in tasks], self.split)

    def successful(self) -> "MultiTaskDataset":
        return MultiTaskDataset([d for d in self.demonstrations if d.success], self.split)


# ---------------------------------------------------------------------------
# disk I/O


def _read_view(path: Path) -> np.ndarray:
    files = sorted(path.glob("frame_*.png"))
    return np.stack([np.asarray(Image.open(f).convert("RGB")) for f in files]) if files else np.zeros((0,))


def load_demonstration(path: Path, task_name: str) -> Demonstration:
    demo_id = path.name
    meta_path = path / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    views = []
    for v in (0, 1):
        vdir = path / f"view{v}"
        if not vdir.is_dir():
            raise DemoError(demo_id, f"missing view{v}")
        views.append(_read_view(vdir))
    if len(views[0]) != len(views[1]):
        raise DemoError(demo_id, f"view lengths differ ({len(views[0])} vs {len(views[1])})")
    if len(views[0]) == 0:
        raise DemoError(demo_id, "no frames")
    states = colors = None
    if (path / "state.npz").exists():
        with np.load(path / "state.npz") as z:
            states, colors = z["states"], z["colors"]
    return Demonstration(np.stack(views), task_name, bool(meta.get("success", True)),
                         demo_id, int(meta.get("fps", 10)), states, colors)


def load_dataset(root_path, split: str, strict: bool = False) -> MultiTaskDataset:
    """Read every demonstration under ``root_path/split``.

    Malformed demonstrations are rejected: with ``strict`` the first one
    raises :class:`DemoError`, otherwise it is logged and skipped.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    split_dir = root / split
    if not split_dir.is_dir():
        raise DataError(f"split directory {split_dir} does not exist")
    demos = []
    for task_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
        for demo_dir in sorted(p for p in task_dir.iterdir() if p.is_dir()):
            try:
                demos.append(load_demonstration(demo_dir, task_dir.name))
            except DemoError as exc:
                if strict:
                    raise
                log.error("rejected demonstration %s", exc)
    if not demos:
        log.warning("split %s under %s is empty", split, root)
    return MultiTaskDataset(demos, split)


def save_dataset(dataset: MultiTaskDataset, root_path) -> Path:
    split_dir = Path(root_path) / dataset.split
    for demo in dataset.demonstrations:
        ddir = split_dir / demo.task_name / demo.demo_id
        for v in (0, 1):
            vdir = ddir / f"view{v}"
            vdir.mkdir(parents=True, exist_ok=True)
            for t, frame in enumerate(demo.views[v]):
                Image.fromarray(frame).save(vdir / f"frame_{t:06d}.png")
        meta = {"success": bool(demo.success), "fps": int(demo.fps), "frames": demo.num_frames}
        (ddir / "meta.json").write_text(json.dumps(meta, indent=1))
        if demo.states is not None:
            np.savez(ddir / "state.npz", states=demo.states, colors=demo.colors)
    return split_dir


# ---------------------------------------------------------------------------
# synthetic generation


def render_episode(states, colors, size: int) -> np.ndarray:
    out = np.empty((2, len(states), size, size, 3), dtype=np.uint8)
    for t, vec in enumerate(states):
        st = scene.SceneState.from_vector(vec, colors)
        for v in (0, 1):
            out[v, t] = scene.render(st, v, size)
    return out


def generate_synthetic_dataset(tasks, demos_per_task: int, seed: int,
                               fraction_unsuccessful: float = 0.5, split: str = "train",
                               image_size: int = 64, target_steps: int = 36,
                               max_speed: float = 0.4, fps: int = 10) -> MultiTaskDataset:
    """Scripted block-world demonstrations, deterministic in ``seed``.

    ``round(fraction_unsuccessful * demos_per_task)`` demos per task are
    sabotaged so that they end away from the goal configuration.
    """
    if not 0.0 <= fraction_unsuccessful < 1.0:
        raise ValueError("fraction_unsuccessful must be in [0, 1)")
    tasks = list(tasks)
    for task in tasks:
        if task not in scene.TASKS:
            raise ValueError(f"unknown task {task!r}; expected one of {scene.TASKS}")
    split_key = SPLITS.index(split) if split in SPLITS else 99
    demos = []
    for task in tasks:
        task_seq = np.random.SeedSequence([seed, split_key, scene.TASKS.index(task)])
        n_fail = int(round(fraction_unsuccessful * demos_per_task))
        task_rng = np.random.default_rng(task_seq)
        failed = set(task_rng.permutation(demos_per_task)[:n_fail].tolist())
        for k, demo_seq in enumerate(task_seq.spawn(demos_per_task)):
            rng = np.random.default_rng(demo_seq)
            ok = k not in failed
            ep = scene.scripted_episode(task, rng, ok, target_steps, max_speed)
            states = ep.vectors()
            colors = ep.states[0].colors.copy()
            demos.append(Demonstration(render_episode(states, colors, image_size), task, ok,
                                       f"{task}_{split}_{k:04d}", fps, states, colors))
    return MultiTaskDataset(demos, split)


def generate_splits(cfg, seed: int) -> dict:
    """Train/validation on the training tasks, test on the held-out tasks."""
    common = dict(fraction_unsuccessful=cfg.fraction_unsuccessful, image_size=cfg.image_size,
                  target_steps=cfg.target_steps, max_speed=cfg.max_speed, fps=cfg.fps)
    return {
        "train": generate_synthetic_dataset(cfg.train_tasks, cfg.demos_per_task, seed,
                                            split="train", **common),
        "validation": generate_synthetic_dataset(cfg.train_tasks, cfg.val_demos_per_task, seed,
                                                 split="validation", **common),
        "test": generate_synthetic_dataset(cfg.test_tasks, cfg.test_demos_per_task, seed,
                                           split="test", **common),
    }


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class AugmentConfig:
    brightness: tuple = (0.7, 1.3)
    contrast: tuple = (0.7, 1.3)
    saturation: tuple = (0.7, 1.3)
    mirror_prob: float = 0.5
    random_crop: bool = False
    crop_area: tuple = (0.8, 1.0)

    @classmethod
    def from_data_config(cls, cfg) -> "AugmentConfig":
        return cls(tuple(cfg.brightness), tuple(cfg.contrast), tuple(cfg.saturation),
                   cfg.mirror_prob, cfg.random_crop, tuple(cfg.crop_area))


_GRAY = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def augment(frame: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    """Photometric jitter, optional crop-and-resize, random horizontal mirror.

    Input and output are raw ``H x W x 3`` uint8 frames; normalization is a
    separate, later step.
    """
    x = frame.astype(np.float32)
    b = rng.uniform(*cfg.brightness)
    c = rng.uniform(*cfg.contrast)
    s = rng.uniform(*cfg.saturation)
    if b != 1.0:
        x = np.clip(x * b, 0, 255)
    if c != 1.0:
        mean = float((x @ _GRAY).mean())
        x = np.clip((x - mean) * c + mean, 0, 255)
    if s != 1.0:
        gray = (x @ _GRAY)[..., None]
        x = np.clip((x - gray) * s + gray, 0, 255)
    out = np.rint(x).astype(np.uint8)
    if cfg.random_crop:
        out = _random_crop(out, rng, cfg.crop_area)
    if rng.random() < cfg.mirror_prob:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def _random_crop(frame, rng, area_range):
    h, w = frame.shape[:2]
    area = rng.uniform(*area_range)
    side = max(1, int(round(np.sqrt(area) * h)))
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    crop = frame[top:top + side, left:left + side]
    return np.asarray(Image.fromarray(crop).resize((w, h), Image.BILINEAR))


def normalize(frames: np.ndarray) -> np.ndarray:
    """uint8 ``(..., H, W, 3)`` -> float32 ``(..., 3, H, W)`` with ImageNet channel stats."""
    x = frames.astype(np.float32) / 255.0
    x = (x - IMAGENET_MEAN) / IMAGENET_STD
    return np.ascontiguousarray(np.moveaxis(x, -1, -3))


def prepare(frames: np.ndarray, rng: np.random.Generator | None,
            cfg: AugmentConfig | None) -> np.ndarray:
    """Augment (when ``cfg`` is given) then normalize a stack of raw frames."""
    flat = frames.reshape((-1,) + frames.shape[-3:])
    if cfg is not None:
        flat = np.stack([augment(f, rng, cfg) for f in flat])
    return normalize(flat).reshape(frames.shape[:-3] + (3,) + frames.shape[-3:-1])


# ---------------------------------------------------------------------------
# batch sampling


@dataclass
class BatchSpec:
    view_pairs: int = 4
    frames: int = 32
    negative_margin: int = 2


@dataclass
class SkillFrameSpec:
    num_domain_frames: int = 2
    stride_dt: int = 15

    def __post_init__(self):
        if self.num_domain_frames < 1 or self.stride_dt < 1:
            raise ValueError("num_domain_frames and stride_dt must be >= 1")

    def fits(self, num_frames: int) -> bool:
        return self.num_domain_frames * self.stride_dt < num_frames or (
            self.num_domain_frames == 1 and num_frames >= 1)

    def start_range(self, num_frames: int) -> range:
        return range(0, num_frames - (self.num_domain_frames - 1) * self.stride_dt)


@dataclass
class MultiViewBatch:
    frames: np.ndarray  # (M, 3, H, W) normalized, or raw (M, H, W, 3) when unprepared
    labels: np.ndarray  # (M,)
    source_pair_ids: np.ndarray  # (M,) index of the view pair (demonstration) in the batch
    time_indices: np.ndarray
    view_ids: np.ndarray

    def negative_mask(self, margin: int) -> np.ndarray:
        """``mask[i, k]``: k is a temporal negative for anchor i."""
        same_demo = self.source_pair_ids[:, None] == self.source_pair_ids[None, :]
        diff_label = self.labels[:, None] != self.labels[None, :]
        far = np.abs(self.time_indices[:, None] - self.time_indices[None, :]) >= margin
        return same_demo & diff_label & far


def sample_metric_batch(dataset: MultiTaskDataset, spec: BatchSpec, rng: np.random.Generator,
                        augment_cfg: AugmentConfig | None = None,
                        normalized: bool = True) -> MultiViewBatch:
    """Pick ``spec.view_pairs`` demonstrations and, in each, simultaneous
    cross-view frame pairs at distinct times.

    Each pair shares one label; frames of the same demonstration with other
    labels are the temporal negatives.
    """
    n = spec.view_pairs
    if spec.frames % (2 * n):
        raise SamplingError(f"{spec.frames} frames cannot be split evenly over {n} view pairs")
    per_demo = spec.frames // (2 * n)
    eligible = [i for i, d in enumerate(dataset.demonstrations) if d.num_frames >= per_demo]
    if len(eligible) < n:
        raise SamplingError(f"need {n} demonstrations with >= {per_demo} frames, have {len(eligible)}")
    chosen = rng.choice(eligible, size=n, replace=False)
    frames, labels, pairs, times, views = [], [], [], [], []
    for p, di in enumerate(chosen):
        demo = dataset.demonstrations[int(di)]
        ts = np.sort(rng.choice(demo.num_frames, size=per_demo, replace=False))
        for j, t in enumerate(ts):
            lab = p * per_demo + j
            for v in (0, 1):
                frames.append(demo.views[v, t])
                labels.append(lab)
                pairs.append(p)
                times.append(int(t))
                views.append(v)
    raw = np.stack(frames)
    out = prepare(raw, rng, augment_cfg) if normalized else raw
    return MultiViewBatch(out, np.asarray(labels), np.asarray(pairs),
                          np.asarray(times), np.asarray(views))


@dataclass
class SkillBatch:
    frames: np.ndarray  # (count, d, H, W, 3) raw, or (count, d, 3, H, W) normalized
    demo_index: np.ndarray
    view_ids: np.ndarray
    start_times: np.ndarray


def sample_skill_pairs(dataset: MultiTaskDataset, spec: SkillFrameSpec, count: int,
                       success_only: bool, rng: np.random.Generator,
                       augment_cfg: AugmentConfig | None = None,
                       normalized: bool = False) -> SkillBatch:
    """``count`` tuples of ``num_domain_frames`` frames from one view of one
    demonstration at ``t, t + stride, ...``."""
    eligible = [i for i, d in enumerate(dataset.demonstrations)
                if (d.success or not success_only) and spec.fits(d.num_frames)]
    if not eligible:
        raise SamplingError("no eligible demonstration for skill sampling"
                            + (" (success_only)" if success_only else ""))
    idx = rng.choice(eligible, size=count, replace=True)
    view_ids = rng.integers(0, 2, size=count)
    starts = np.empty(count, dtype=np.int64)
    out = []
    for k, (di, v) in enumerate(zip(idx, view_ids)):
        demo = dataset.demonstrations[int(di)]
        r = spec.start_range(demo.num_frames)
        t = int(rng.integers(r.start, r.stop))
        starts[k] = t
        ts = t + spec.stride_dt * np.arange(spec.num_domain_frames)
        out.append(demo.views[int(v), ts])
    frames = np.stack(out)
    if normalized:
        frames = prepare(frames, rng, augment_cfg)
    return SkillBatch(frames, np.asarray(idx), view_ids, starts)
