"""Frame encoder: backbone -> two conv layers -> spatial softmax -> FC -> embedding."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import EncoderConfig


class ShapeError(ValueError):
    pass


def _fold_expectation(q: torch.Tensor) -> torch.Tensor:
    """Expected coordinate of a distribution ``q`` over ``n`` bins spread on [-1, 1].

    Computed as ``sum_j (q_j - q_mirror(j)) * c_j`` over the positive half, so a
    mirror-symmetric ``q`` gives exactly zero.
    """
    n = q.shape[-1]
    if n == 1:
        return torch.zeros(q.shape[:-1], dtype=q.dtype, device=q.device)
    half = n // 2
    idx = torch.arange(n - half, n, dtype=q.dtype, device=q.device)
    coords = (2 * idx - (n - 1)) / (n - 1)
    hi = q[..., n - half:]
    lo = q[..., :half].flip(-1)
    return ((hi - lo) * coords).sum(-1)


def spatial_softmax(features: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """``(B, C, H, W)`` -> ``(B, 2C)`` expected (x, y) per channel in [-1, 1].

    x runs left to right, y top to bottom; output is interleaved
    ``[x_0, y_0, x_1, y_1, ...]``.
    """
    b, c, h, w = features.shape
    p = F.softmax(features.reshape(b, c, h * w) / temperature, dim=-1).reshape(b, c, h, w)
    ex = _fold_expectation(p.sum(dim=2))
    ey = _fold_expectation(p.sum(dim=3))
    return torch.stack([ex, ey], dim=-1).reshape(b, 2 * c)


class SpatialSoftmax(nn.Module):
    """Spatial softmax with a learnable temperature."""

    def __init__(self, temperature: float = 1.0, learnable: bool = True):
        super().__init__()
        log_t = torch.tensor(float(np.log(temperature)))
        if learnable:
            self.log_temperature = nn.Parameter(log_t)
        else:
            self.register_buffer("log_temperature", log_t)

    def forward(self, x):
        return spatial_softmax(x, self.log_temperature.exp())


def _groups(channels: int) -> int:
    # per-sample normalization; keeps embeddings independent of batch composition
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


class SmallBackbone(nn.Module):
    """Four strided 3x3 conv blocks; 64x64 input -> 16x16 feature map."""

    def __init__(self, channels=(16, 32, 32, 32), strides=(2, 1, 2, 1)):
        super().__init__()
        layers, c_in = [], 3
        for c_out, s in zip(channels, strides):
            layers += [nn.Conv2d(c_in, c_out, 3, stride=s, padding=1),
                       nn.GroupNorm(_groups(c_out), c_out), nn.ReLU()]
            c_in = c_out
        self.net = nn.Sequential(*layers)
        self.out_channels = c_in
        self.stride = int(np.prod(strides))

    def forward(self, x):
        return self.net(x)


class InceptionBackbone(nn.Module):
    """torchvision Inception-v3 truncated after ``truncate_at``."""

    _ORDER = ("Conv2d_1a_3x3", "Conv2d_2a_3x3", "Conv2d_2b_3x3", "maxpool1",
              "Conv2d_3b_1x1", "Conv2d_4a_3x3", "maxpool2", "Mixed_5b", "Mixed_5c",
              "Mixed_5d", "Mixed_6a", "Mixed_6b", "Mixed_6c", "Mixed_6d", "Mixed_6e")
    _CHANNELS = {"Mixed_5b": 256, "Mixed_5c": 288, "Mixed_5d": 288, "Mixed_6a": 768,
                 "Mixed_6b": 768, "Mixed_6c": 768, "Mixed_6d": 768, "Mixed_6e": 768}

    def __init__(self, truncate_at: str = "Mixed_5d", pretrained: bool = False):
        super().__init__()
        from torchvision.models import Inception_V3_Weights, inception_v3

        if truncate_at not in self._CHANNELS:
            raise ValueError(f"cannot truncate Inception at {truncate_at!r}")
        weights = Inception_V3_Weights.IMAGENET1K_V1 if pretrained else None
        full = inception_v3(weights=weights, aux_logits=pretrained, init_weights=not pretrained)
        keep = self._ORDER[: self._ORDER.index(truncate_at) + 1]
        self.net = nn.Sequential(*[getattr(full, name) for name in keep])
        self.out_channels = self._CHANNELS[truncate_at]
        self.stride = 8

    def forward(self, x):
        return self.net(x)


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or EncoderConfig()
        if cfg.embedding_dim < 2:
            raise ValueError("embedding_dim must be >= 2")
        if cfg.backbone == "small":
            self.backbone = SmallBackbone()
            head = cfg.feature_channels
        elif cfg.backbone == "full":
            self.backbone = InceptionBackbone(cfg.full_truncate_at, cfg.pretrained)
            head = cfg.feature_channels if cfg.feature_channels != 32 else 100
        else:
            raise ValueError(f"unknown backbone {cfg.backbone!r}")
        if cfg.input_size % self.backbone.stride:
            raise ValueError(f"input_size {cfg.input_size} is not a multiple of the "
                             f"backbone stride {self.backbone.stride}")
        self.head = nn.Sequential(
            nn.Conv2d(self.backbone.out_channels, head, 3, padding=1),
            nn.GroupNorm(_groups(head), head), nn.ReLU(),
            nn.Conv2d(head, head, 3, padding=1),
            nn.GroupNorm(_groups(head), head),
        )
        self.spatial_softmax = SpatialSoftmax()
        self.fc = nn.Linear(2 * head, cfg.embedding_dim)

    @property
    def embedding_dim(self) -> int:
        return self.cfg.embedding_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        size = self.cfg.input_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != size or x.shape[3] != size:
            raise ShapeError(f"expected (B, 3, {size}, {size}) input, got {tuple(x.shape)}")
        y = self.backbone(x)
        y = self.head(y)
        y = self.fc(self.spatial_softmax(y))
        if self.cfg.l2_normalize:
            y = F.normalize(y, dim=-1)
        return y


def _as_tensor(frames, model: nn.Module) -> torch.Tensor:
    p = next(model.parameters())
    return torch.as_tensor(np.ascontiguousarray(frames), dtype=p.dtype, device=p.device)


@torch.no_grad()
def embed(encoder: Encoder, frame) -> np.ndarray:
    """Embedding of one normalized ``(3, H, W)`` frame, in inference mode."""
    frame = np.asarray(frame)
    if frame.ndim != 3:
        raise ShapeError(f"expected a single (3, H, W) frame, got {frame.shape}")
    return embed_sequence(encoder, frame[None])[0]


@torch.no_grad()
def embed_sequence(encoder: Encoder, frames, chunk: int = 64) -> np.ndarray:
    """Order-preserving batched :func:`embed`; returns a ``(k, n)`` array."""
    frames = np.asarray(frames) if len(frames) else np.zeros((0,))
    if len(frames) == 0:
        return np.zeros((0, encoder.embedding_dim), dtype=np.float32)
    was_training = encoder.training
    encoder.eval()
    try:
        out = [encoder(_as_tensor(frames[i:i + chunk], encoder)).cpu().numpy()
               for i in range(0, len(frames), chunk)]
    finally:
        encoder.train(was_training)
    return np.concatenate(out)
