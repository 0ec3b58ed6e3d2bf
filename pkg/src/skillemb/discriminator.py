"""Skill discriminator: skill embedding -> latent Gaussian -> task distribution.

Only used while training; rewards and evaluation never touch it.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import DiscriminatorConfig


class LatentGaussian(NamedTuple):
    mu: torch.Tensor
    log_var: torch.Tensor

    @property
    def sigma(self) -> torch.Tensor:
        return torch.exp(0.5 * self.log_var)


def sample_latent(g: LatentGaussian, epsilon: torch.Tensor) -> torch.Tensor:
    """Reparameterized draw ``mu + sigma * epsilon``."""
    return g.mu + g.sigma * epsilon


def kl_to_standard_normal(g: LatentGaussian) -> torch.Tensor:
    """Per-row ``KL(N(mu, sigma^2) || N(0, I))`` for diagonal Gaussians."""
    return 0.5 * (g.mu.pow(2) + g.log_var.exp() - g.log_var - 1.0).sum(-1)


class Discriminator(nn.Module):
    def __init__(self, input_dim: int, cfg: DiscriminatorConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or DiscriminatorConfig()
        self.input_dim = input_dim
        k = cfg.latent_dim
        self.trunk = nn.Sequential(nn.Linear(input_dim, cfg.hidden), nn.ReLU(), nn.Dropout(cfg.dropout))
        if cfg.latent == "kl":
            self.latent_head = nn.Linear(cfg.hidden, 2 * k)
        elif cfg.latent == "fc":
            self.latent_head = nn.Linear(cfg.hidden, k)
        else:
            raise ValueError(f"unknown latent mode {cfg.latent!r}")
        self.classifier = nn.Sequential(
            nn.Linear(k, cfg.hidden), nn.ReLU(), nn.Dropout(cfg.dropout),
            nn.Linear(cfg.hidden, cfg.num_classes),
        )
        last = self.classifier[-1]
        if cfg.zero_init:
            for layer in (self.latent_head, last):
                nn.init.zeros_(layer.weight)
                nn.init.zeros_(layer.bias)
        else:
            # small head keeps the initial class distribution near uniform
            with torch.no_grad():
                last.weight.mul_(cfg.head_init_scale)
                last.bias.zero_()

    @property
    def num_classes(self) -> int:
        return self.cfg.num_classes

    def _check(self, x):
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"skill embedding has length {x.shape[-1]}, expected {self.input_dim}")

    def encode_latent(self, x: torch.Tensor) -> LatentGaussian:
        if self.cfg.latent != "kl":
            raise RuntimeError("encode_latent requires latent = kl")
        self._check(x)
        mu, log_var = self.latent_head(self.trunk(x)).chunk(2, dim=-1)
        return LatentGaussian(mu, log_var)

    def logits(self, z: torch.Tensor) -> torch.Tensor:
        return self.classifier(z)

    def classify(self, z: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.logits(z), dim=-1)

    def forward(self, x: torch.Tensor, epsilon: torch.Tensor | None = None,
                generator: torch.Generator | None = None):
        """Returns ``(probs, kl)``; ``kl`` is a per-row tensor (zeros for the FC variant)."""
        self._check(x)
        if self.cfg.latent == "fc":
            z = F.relu(self.latent_head(self.trunk(x)))
            return self.classify(z), torch.zeros(x.shape[0], dtype=x.dtype, device=x.device)
        g = self.encode_latent(x)
        if epsilon is None:
            epsilon = torch.randn(g.mu.shape, generator=generator, dtype=g.mu.dtype, device=g.mu.device)
        z = sample_latent(g, epsilon)
        return self.classify(z), kl_to_standard_normal(g)
