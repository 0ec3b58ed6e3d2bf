"""Alignment evaluation, baselines and plots.

Alignment of two synchronized views: for each frame ``j`` of the first view
find its Euclidean nearest neighbour ``nn_j`` among the second view's frames
and average ``|j - nn_j| / F`` over ``j``. Ties go to the smallest index.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import dataio
from .encoder import Encoder, embed_sequence
from .kernels import nearest_neighbor_indices

log = logging.getLogger(__name__)


class EvaluationError(RuntimeError):
    pass


def alignment_loss(view1, view2, return_indices: bool = False):
    a = np.asarray(view1, dtype=np.float64)
    b = np.asarray(view2, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("expected two (F, n) embedding sequences")
    if len(a) != len(b):
        raise ValueError(f"views have different lengths: {len(a)} != {len(b)}")
    if len(a) == 0:
        raise ValueError("empty embedding sequence")
    f = len(a)
    nn = nearest_neighbor_indices(a, b)
    value = float(np.abs(np.arange(f) - nn).sum() / f / f)
    return (value, nn) if return_indices else value


@dataclass
class AlignmentRecord:
    demo_id: str
    task: str
    success: bool
    view1_to_view2: float
    view2_to_view1: float
    nn_trace: list

    @property
    def value(self) -> float:
        return 0.5 * (self.view1_to_view2 + self.view2_to_view1)


@dataclass
class AlignmentReport:
    records: list = field(default_factory=list)

    @property
    def per_video(self) -> list:
        return [(r.demo_id, r.value) for r in self.records]

    @property
    def mean(self) -> float:
        return float(np.mean([r.value for r in self.records]))

    @property
    def mean_view1_to_view2(self) -> float:
        return float(np.mean([r.view1_to_view2 for r in self.records]))

    @property
    def mean_view2_to_view1(self) -> float:
        return float(np.mean([r.view2_to_view1 for r in self.records]))

    def summary(self) -> str:
        return (f"{len(self.records)} videos  alignment mean {self.mean:.4f}  "
                f"(view1->view2 {self.mean_view1_to_view2:.4f}, "
                f"view2->view1 {self.mean_view2_to_view1:.4f})")

    def write(self, path) -> Path:
        """One JSON record per video, then a summary record."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for r in self.records:
                fh.write(json.dumps({"demo_id": r.demo_id, "task": r.task, "success": r.success,
                                     "alignment": r.value, "view1_to_view2": r.view1_to_view2,
                                     "view2_to_view1": r.view2_to_view1,
                                     "nn_trace": r.nn_trace}) + "\n")
            fh.write(json.dumps({"summary": True, "videos": len(self.records), "mean": self.mean,
                                 "view1_to_view2": self.mean_view1_to_view2,
                                 "view2_to_view1": self.mean_view2_to_view1}) + "\n")
        return path


def _resolve_encoder(model) -> Encoder:
    if isinstance(model, Encoder):
        return model
    from .trainer import encoder_from_checkpoint

    return encoder_from_checkpoint(model)


def embed_views(encoder: Encoder, demo: dataio.Demonstration):
    return [embed_sequence(encoder, dataio.normalize(demo.views[v])) for v in (0, 1)]


def evaluate_embeddings(embed_fn, dataset: dataio.MultiTaskDataset, tasks=None) -> AlignmentReport:
    """Alignment report for any ``embed_fn(demo) -> (e_view1, e_view2)``."""
    if tasks is not None:
        dataset = dataset.select_tasks(tasks)
    if len(dataset) == 0:
        raise EvaluationError(f"no demonstrations to evaluate (tasks={tasks})")
    report = AlignmentReport()
    for demo in dataset.demonstrations:
        e0, e1 = embed_fn(demo)
        a01, nn = alignment_loss(e0, e1, return_indices=True)
        a10 = alignment_loss(e1, e0)
        report.records.append(AlignmentRecord(demo.demo_id, demo.task_name, demo.success,
                                              a01, a10, [int(i) for i in nn]))
    return report


def evaluate_transfer(model, dataset: dataio.MultiTaskDataset, tasks=None) -> AlignmentReport:
    """Align both views of every demonstration of ``tasks`` (all tasks if None)."""
    encoder = _resolve_encoder(model)
    return evaluate_embeddings(lambda d: embed_views(encoder, d), dataset, tasks)


# ---------------------------------------------------------------------------
# baselines


def random_embedding_alignment(dataset: dataio.MultiTaskDataset, dim: int = 32,
                               seed: int = 0, tasks=None) -> AlignmentReport:
    """i.i.d. Gaussian embeddings per frame: the chance level (about 1/3)."""
    rng = np.random.default_rng(seed)

    def fn(demo):
        f = demo.num_frames
        return rng.standard_normal((f, dim)), rng.standard_normal((f, dim))

    return evaluate_embeddings(fn, dataset, tasks)


def random_encoder_alignment(dataset: dataio.MultiTaskDataset, cfg=None, seed: int = 0,
                             tasks=None) -> AlignmentReport:
    """Untrained encoder with seeded random weights."""
    from .config import ExperimentConfig

    cfg = cfg or ExperimentConfig()
    torch.manual_seed(seed)
    return evaluate_transfer(Encoder(cfg.encoder), dataset, tasks)


# ---------------------------------------------------------------------------
# plots


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def tsne_trajectory(embeddings, perplexity: float = 10.0, seed: int = 0) -> np.ndarray:
    """2D t-SNE (exact method, PCA init, fixed seed) of an embedding sequence."""
    from sklearn.manifold import TSNE

    x = np.asarray(embeddings, dtype=np.float64)
    if len(x) < 5:
        raise ValueError(f"need at least 5 frames for a trajectory plot, got {len(x)}")
    perplexity = min(perplexity, (len(x) - 1) / 3)
    tsne = TSNE(n_components=2, perplexity=perplexity, init="pca", random_state=seed,
                method="exact")
    return tsne.fit_transform(x)


def arc_length_position(points, neighbors: int = 4) -> np.ndarray:
    """Geodesic position of each 2D point along the curve the points trace.

    Distances are shortest paths on the symmetric k-nearest-neighbour graph,
    measured from one end of the curve (the point farthest from an arbitrary
    point). Time order is not used, so the orientation is arbitrary.
    """
    from scipy.sparse.csgraph import shortest_path
    from sklearn.neighbors import kneighbors_graph

    p = np.asarray(points, dtype=np.float64)
    k = min(neighbors, len(p) - 1)
    graph = kneighbors_graph(p, k, mode="distance")
    graph = graph.maximum(graph.T)
    dist = shortest_path(graph, directed=False)
    finite = np.where(np.isfinite(dist), dist, -1)
    start = int(np.argmax(finite[0]))
    d = dist[start]
    if not np.all(np.isfinite(d)):  # disconnected graph: fall back to straight-line distance
        d = np.linalg.norm(p - p[start], axis=1)
    return d


def emit_trajectory_plot(model, demonstration: dataio.Demonstration, out_path, view: int = 0,
                         perplexity: float = 10.0, seed: int = 0) -> np.ndarray:
    """Writes a t-SNE scatter colored by time; returns the 2D points."""
    if demonstration.num_frames < 5:
        raise ValueError(f"{demonstration.demo_id}: need at least 5 frames, "
                         f"got {demonstration.num_frames}")
    encoder = _resolve_encoder(model)
    emb = embed_sequence(encoder, dataio.normalize(demonstration.views[view]))
    pts = tsne_trajectory(emb, perplexity, seed)
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(pts[:, 0], pts[:, 1], color="0.8", lw=0.8, zorder=1)
    sc = ax.scatter(pts[:, 0], pts[:, 1], c=np.arange(len(pts)), cmap="viridis", s=18, zorder=2)
    fig.colorbar(sc, ax=ax, label="frame")
    ax.set_title(f"{demonstration.task_name} ({demonstration.demo_id})")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=80)
    plt.close(fig)
    return pts


def reward_series(embeddings, goal_embedding) -> np.ndarray:
    """Negative distance to the goal, min-max normalized to [0, 1].

    A constant distance cannot be normalized; the series is then flat 0.5.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    g = np.asarray(goal_embedding, dtype=np.float64)
    r = -np.linalg.norm(e - g[None], axis=1)
    lo, hi = r.min(), r.max()
    if not hi - lo > 1e-12 * max(1.0, abs(hi)):
        warnings.warn("reward series is constant; returning a flat 0.5 series", RuntimeWarning,
                      stacklevel=2)
        return np.full(len(r), 0.5)
    return (r - lo) / (hi - lo)


def emit_reward_curve(model, demonstration: dataio.Demonstration, goal_frame=None, out_path=None,
                      view: int = 0, goal_view: int = 1) -> np.ndarray:
    """Reward of each frame of ``view`` against a goal frame from ``goal_view``.

    ``goal_frame`` defaults to the last frame of ``goal_view``; pass an index or
    a ``(H, W, 3)`` image to override.
    """
    encoder = _resolve_encoder(model)
    if goal_frame is None:
        goal_frame = demonstration.num_frames - 1
    if np.isscalar(goal_frame):
        goal_frame = demonstration.views[goal_view, int(goal_frame)]
    emb = embed_sequence(encoder, dataio.normalize(demonstration.views[view]))
    goal = embed_sequence(encoder, dataio.normalize(np.asarray(goal_frame)[None]))[0]
    series = reward_series(emb, goal)
    if out_path is not None:
        plt = _plt()
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(np.arange(len(series)), series, marker="o", ms=3)
        ax.set_xlabel("frame")
        ax.set_ylabel("normalized reward")
        ax.set_ylim(-0.05, 1.05)
        ax.set_title(demonstration.demo_id)
        fig.tight_layout()
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out_path, dpi=80)
        plt.close(fig)
    return series
