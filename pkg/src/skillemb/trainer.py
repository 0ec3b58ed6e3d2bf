"""Alternating adversarial training of the encoder and the skill discriminator.

Each step first takes ``discriminator_updates`` descent steps on the
discriminator objective (encoder outputs detached), then
``encoder_updates`` ascent steps on the encoder objective evaluated through
the frozen discriminator. The two optimizers own disjoint parameter sets.

Checkpoint container (``torch.save`` of a dict, ``format_version`` 1)::

    format, format_version, config (nested dict), step,
    encoder, discriminator, opt_encoder, opt_discriminator   (state dicts)
    numpy_rng, torch_rng, eps_rng                            (RNG states)
    best_val_alignment, training_only                        (keys safe to strip)
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import dataio, losses
from .config import ExperimentConfig
from .discriminator import Discriminator
from .encoder import Encoder, embed_sequence
from .kernels import nearest_neighbor_indices

log = logging.getLogger(__name__)

FORMAT = "skillemb-checkpoint"
FORMAT_VERSION = 1
TRAINING_ONLY = ("discriminator", "opt_encoder", "opt_discriminator", "numpy_rng",
                 "torch_rng", "eps_rng")
METRIC_KEYS = ("lifted", "H_cond", "H_marg", "KL", "L_D", "L_E")


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointMismatchError(RuntimeError):
    pass


@dataclass
class TrainState:
    config: ExperimentConfig
    encoder: Encoder
    discriminator: Discriminator | None
    opt_encoder: torch.optim.Optimizer
    opt_discriminator: torch.optim.Optimizer | None
    rng: np.random.Generator
    eps_gen: torch.Generator
    step: int = 0
    best_val_alignment: float = float("inf")


def set_determinism(strict: bool) -> None:
    torch.use_deterministic_algorithms(strict, warn_only=False)
    if strict:
        torch.set_num_threads(1)


def skill_spec(cfg: ExperimentConfig) -> dataio.SkillFrameSpec:
    return dataio.SkillFrameSpec(cfg.dataio.num_domain_frames, cfg.dataio.stride)


def batch_spec(cfg: ExperimentConfig) -> dataio.BatchSpec:
    return dataio.BatchSpec(cfg.dataio.view_pairs, cfg.dataio.batch_frames, cfg.dataio.negative_margin)


def init_state(cfg: ExperimentConfig) -> TrainState:
    seed = cfg.experiment.seed
    torch.manual_seed(seed)
    encoder = Encoder(cfg.encoder)
    opt_e = torch.optim.Adam(encoder.parameters(), lr=cfg.trainer.learning_rate)
    disc = opt_d = None
    if cfg.losses.adversarial:
        disc = Discriminator(cfg.dataio.num_domain_frames * cfg.encoder.embedding_dim, cfg.discriminator)
        opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.trainer.learning_rate)
    eps_gen = torch.Generator().manual_seed(seed + 1)
    return TrainState(cfg, encoder, disc, opt_e, opt_d, np.random.default_rng(seed), eps_gen)


def sample_batches(state: TrainState, train: dataio.MultiTaskDataset):
    cfg = state.config
    aug = dataio.AugmentConfig.from_data_config(cfg.dataio) if cfg.dataio.augment else None
    metric = dataio.sample_metric_batch(train, batch_spec(cfg), state.rng, aug)
    skills = None
    if cfg.losses.adversarial:
        skills = dataio.sample_skill_pairs(train, skill_spec(cfg), cfg.dataio.skill_batch,
                                           cfg.dataio.success_only, state.rng, aug, normalized=True)
    return metric, skills


def _diagnostics(frames, emb):
    return (f"frames mean={float(frames.mean()):.4g} std={float(frames.std()):.4g}; "
            f"embedding norm max={float(emb.norm(dim=-1).max()):.4g}")


def train_step(state: TrainState, metric_batch: dataio.MultiViewBatch,
               skill_batch: dataio.SkillBatch | None):
    """One discriminator phase then one encoder phase. Returns a metrics dict."""
    cfg = state.config
    lcfg = cfg.losses
    enc, disc = state.encoder, state.discriminator
    enc.train()
    m_frames = torch.as_tensor(metric_batch.frames)
    negmask = metric_batch.negative_mask(cfg.dataio.negative_margin)
    n_metric = m_frames.shape[0]
    if skill_batch is not None:
        s_frames = torch.as_tensor(skill_batch.frames)
        n_skill, d = s_frames.shape[:2]
        frames = torch.cat([m_frames, s_frames.reshape((-1,) + s_frames.shape[2:])])
    else:
        frames = m_frames

    def forward():
        emb = enc(frames)
        skills = emb[n_metric:].reshape(n_skill, -1) if skill_batch is not None else None
        return emb, emb[:n_metric], skills

    emb, emb_m, skills = forward()
    out = {k: None for k in METRIC_KEYS}

    if disc is not None:
        disc.train()
        for p in disc.parameters():
            p.requires_grad_(True)
        for _ in range(cfg.trainer.discriminator_updates):
            probs, kl = disc(skills.detach(), generator=state.eps_gen)
            kl_mean = kl.mean()
            l_d = losses.discriminator_loss(probs, kl_mean, lcfg)
            if not torch.isfinite(l_d):
                raise TrainingDivergedError(f"non-finite L_D at step {state.step}: "
                                            + _diagnostics(frames, emb))
            state.opt_discriminator.zero_grad(set_to_none=True)
            l_d.backward()
            state.opt_discriminator.step()
        out.update(KL=float(kl_mean.detach()), L_D=float(l_d.detach()))
        for p in disc.parameters():
            p.requires_grad_(False)

    for k in range(cfg.trainer.encoder_updates):
        if k > 0:
            emb, emb_m, skills = forward()
        lifted = losses.metric_loss(emb_m, metric_batch.labels, lcfg, negmask)
        probs = None
        if disc is not None:
            probs, _ = disc(skills, generator=state.eps_gen)
        l_e = losses.encoder_loss(probs, lifted, lcfg)
        if not torch.isfinite(l_e):
            raise TrainingDivergedError(f"non-finite L_E at step {state.step}: "
                                        + _diagnostics(frames, emb))
        state.opt_encoder.zero_grad(set_to_none=True)
        (-l_e).backward()
        state.opt_encoder.step()

    if disc is not None:
        for p in disc.parameters():
            p.requires_grad_(True)
        out.update(H_cond=float(losses.conditional_entropy(probs.detach())),
                   H_marg=float(losses.marginal_entropy(probs.detach())))
    out.update(lifted=float(lifted.detach()), L_E=float(l_e.detach()))
    state.step += 1
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: TrainState, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "config": state.config.to_dict(),
        "step": state.step,
        "encoder": state.encoder.state_dict(),
        "discriminator": state.discriminator.state_dict() if state.discriminator else None,
        "opt_encoder": state.opt_encoder.state_dict(),
        "opt_discriminator": state.opt_discriminator.state_dict() if state.opt_discriminator else None,
        "numpy_rng": state.rng.bit_generator.state,
        "torch_rng": torch.get_rng_state(),
        "eps_rng": state.eps_gen.get_state(),
        "best_val_alignment": state.best_val_alignment,
        "training_only": list(TRAINING_ONLY),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != FORMAT:
        raise CheckpointMismatchError(f"{path} is not a {FORMAT} file")
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointMismatchError(f"unsupported checkpoint version {payload.get('format_version')}")
    return payload


def strip_training_state(payload: dict) -> dict:
    """Deployment copy: encoder weights and config only."""
    return {k: v for k, v in payload.items() if k not in TRAINING_ONLY}


def encoder_from_checkpoint(payload_or_path) -> Encoder:
    payload = payload_or_path if isinstance(payload_or_path, dict) else load_checkpoint(payload_or_path)
    cfg = ExperimentConfig.from_dict(payload["config"])
    enc = Encoder(cfg.encoder)
    enc.load_state_dict(payload["encoder"])
    enc.eval()
    return enc


def restore_state(payload: dict, cfg: ExperimentConfig) -> TrainState:
    saved = ExperimentConfig.from_dict(payload["config"])
    if _resume_key(saved) != _resume_key(cfg):
        raise CheckpointMismatchError("checkpoint was produced by a different configuration")
    state = init_state(cfg)
    state.encoder.load_state_dict(payload["encoder"])
    state.opt_encoder.load_state_dict(payload["opt_encoder"])
    if state.discriminator is not None:
        state.discriminator.load_state_dict(payload["discriminator"])
        state.opt_discriminator.load_state_dict(payload["opt_discriminator"])
    state.rng.bit_generator.state = payload["numpy_rng"]
    torch.set_rng_state(payload["torch_rng"])
    state.eps_gen.set_state(payload["eps_rng"])
    state.step = int(payload["step"])
    state.best_val_alignment = float(payload.get("best_val_alignment", float("inf")))
    return state


def _resume_key(cfg: ExperimentConfig) -> dict:
    d = cfg.to_dict()
    d["trainer"].pop("steps", None)  # resuming to a longer budget is allowed
    d["experiment"].pop("output_dir", None)
    d.pop("evaluation", None)
    d.pop("rl", None)
    return d


# ---------------------------------------------------------------------------
# monitoring


class SkillMonitor:
    """Discriminator entropies on a fixed set of held-out successful skills."""

    def __init__(self, cfg: ExperimentConfig, dataset: dataio.MultiTaskDataset):
        rng = np.random.default_rng(10_000 + cfg.experiment.seed)
        batch = dataio.sample_skill_pairs(dataset, skill_spec(cfg), cfg.trainer.monitor_skills,
                                          True, rng, None, normalized=True)
        self.frames = batch.frames
        self.eps = torch.as_tensor(rng.standard_normal((len(batch.frames), cfg.discriminator.latent_dim)),
                                   dtype=torch.float32)

    @torch.no_grad()
    def __call__(self, state: TrainState) -> dict:
        n, d = self.frames.shape[:2]
        emb = embed_sequence(state.encoder, self.frames.reshape((n * d,) + self.frames.shape[2:]))
        disc = state.discriminator
        was = disc.training
        disc.eval()
        probs, _ = disc(torch.as_tensor(emb.reshape(n, -1)), epsilon=self.eps)
        disc.train(was)
        return {"H_cond": float(losses.conditional_entropy(probs)),
                "H_marg": float(losses.marginal_entropy(probs))}


def mean_alignment(encoder: Encoder, dataset: dataio.MultiTaskDataset) -> float:
    vals = []
    for demo in dataset.demonstrations:
        e0 = embed_sequence(encoder, dataio.normalize(demo.views[0]))
        e1 = embed_sequence(encoder, dataio.normalize(demo.views[1]))
        f = len(e0)
        for a, b in ((e0, e1), (e1, e0)):
            nn = nearest_neighbor_indices(a, b)
            vals.append(float(np.abs(np.arange(f) - nn).sum() / f / f))
    return float(np.mean(vals)) if vals else float("nan")


# ---------------------------------------------------------------------------
# loop


class MetricLog:
    """Append-only JSON-lines log. Readers keep the last record per (kind, step)."""

    def __init__(self, path):
        self.path = Path(path) if path else None
        self.records = []

    def write(self, record: dict):
        self.records.append(record)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a") as fh:
                fh.write(json.dumps(record) + "\n")


def read_metrics(path, kind: str | None = None) -> list:
    latest = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            r = json.loads(line)
            latest[(r.get("kind"), r["step"])] = r
    rows = [r for (k, _), r in sorted(latest.items(), key=lambda kv: (str(kv[0][0]), kv[0][1]))]
    return [r for r in rows if kind is None or r.get("kind") == kind]


def fit(cfg: ExperimentConfig, train: dataio.MultiTaskDataset,
        validation: dataio.MultiTaskDataset | None = None, out_dir=None,
        resume: bool = True) -> dict:
    """Train for ``cfg.trainer.steps`` steps; returns the final checkpoint payload.

    With ``out_dir``: writes ``metrics.jsonl``, ``last.pt`` every
    ``checkpoint_every`` steps and at the end, and ``best.pt`` (lowest
    validation alignment). Resumes from ``last.pt`` when present.
    """
    tcfg = cfg.trainer
    if tcfg.steps < 0:
        raise ValueError("trainer.steps must be >= 0")
    set_determinism(tcfg.strict_determinism)
    out = Path(out_dir) if out_dir else None
    last = out / "last.pt" if out else None
    if out and resume and last.exists():
        state = restore_state(load_checkpoint(last), cfg)
        log.info("resumed from %s at step %d", last, state.step)
    else:
        state = init_state(cfg)
    metrics = MetricLog(out / "metrics.jsonl" if out else None)
    monitor = None
    if validation is not None and len(validation) and state.discriminator is not None:
        monitor = SkillMonitor(cfg, validation)

    def checkpoint_monitor():
        if monitor is not None:
            metrics.write({"kind": "monitor", "step": state.step, **monitor(state)})
        if validation is not None and len(validation):
            val = mean_alignment(state.encoder, validation)
            metrics.write({"kind": "val_alignment", "step": state.step, "alignment": val})
            if val < state.best_val_alignment:
                state.best_val_alignment = val
                if out:
                    save_checkpoint(state, out / "best.pt")

    if state.step == 0:
        checkpoint_monitor()
    t0 = time.perf_counter()
    while state.step < tcfg.steps:
        m, s = sample_batches(state, train)
        rec = train_step(state, m, s)
        if state.step % tcfg.log_every == 0 or state.step == tcfg.steps:
            metrics.write({"kind": "train", "step": state.step, **rec,
                           "wall_time": round(time.perf_counter() - t0, 3)})
        if state.step % tcfg.monitor_every == 0 or state.step == tcfg.steps:
            checkpoint_monitor()
        if out and (state.step % tcfg.checkpoint_every == 0 or state.step == tcfg.steps):
            save_checkpoint(state, last)
    if out:
        save_checkpoint(state, last)
    payload = {
        "format": FORMAT, "format_version": FORMAT_VERSION, "config": cfg.to_dict(),
        "step": state.step, "encoder": state.encoder.state_dict(),
        "discriminator": state.discriminator.state_dict() if state.discriminator else None,
        "best_val_alignment": state.best_val_alignment,
    }
    payload["metrics"] = metrics.records
    payload["state"] = state
    return payload
