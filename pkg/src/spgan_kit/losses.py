"""Loss terms for similarity-preserving cycle translation.

All functions take and return torch tensors so they can sit inside an
autograd graph.  Reductions are means over every element (batch, channel,
pixel, patch), which keeps the loss weights resolution independent.
"""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass
from typing import Literal

import torch
from torch import Tensor

Role = Literal["generator", "discriminator"]


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0  # cycle
    lambda2: float = 5.0  # target-domain identity
    lambda3: float = 2.0  # contrastive
    margin_m: float = 2.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.margin_m <= 2.0:
            raise ValueError(f"margin_m must lie in [0, 2], got {self.margin_m}")


@dataclass(frozen=True)
class LossReport:
    adv_T: float
    adv_S: float
    cyc: float
    ide: float
    con: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _check_scores(*scores: Tensor) -> None:
    for s in scores:
        if s.numel() == 0:
            raise ValueError("empty score array")


def least_squares_adversarial(real: Tensor | None, fake: Tensor, role: Role) -> Tensor:
    """Least-squares GAN objective shared by both translation directions.

    Discriminator role: ``mean((real - 1)^2) + mean(fake^2)``.
    Generator role: ``mean((fake - 1)^2)``; ``real`` is ignored and may be None.
    """
    if role == "discriminator":
        if real is None:
            raise ValueError("discriminator role needs real scores")
        _check_scores(real, fake)
        return ((real - 1.0) ** 2).mean() + (fake**2).mean()
    if role == "generator":
        _check_scores(fake)
        return ((fake - 1.0) ** 2).mean()
    raise ValueError(f"unknown role {role!r}")


def adversarial_loss_T(real_target_scores, fake_target_scores, role: Role) -> Tensor:
    """D_T on real target images vs. G(source) images."""
    return least_squares_adversarial(real_target_scores, fake_target_scores, role)


def adversarial_loss_S(real_source_scores, fake_source_scores, role: Role) -> Tensor:
    """D_S on real source images vs. F(target) images."""
    return least_squares_adversarial(real_source_scores, fake_source_scores, role)


def _mean_abs(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def cycle_loss(x: Tensor, F_G_x: Tensor, y: Tensor, G_F_y: Tensor) -> Tensor:
    return _mean_abs(F_G_x, x) + _mean_abs(G_F_y, y)


def identity_loss(x: Tensor, F_x: Tensor, y: Tensor, G_y: Tensor) -> Tensor:
    """F must leave source images alone, G must leave target images alone."""
    return _mean_abs(F_x, x) + _mean_abs(G_y, y)


def normalized_distance(e1: Tensor, e2: Tensor) -> Tensor:
    """Euclidean distance between L2-normalised embeddings (last axis)."""
    if e1.shape != e2.shape:
        raise ValueError(f"embedding shape mismatch: {tuple(e1.shape)} vs {tuple(e2.shape)}")
    n1 = e1.norm(dim=-1, keepdim=True)
    n2 = e2.norm(dim=-1, keepdim=True)
    if bool((n1 == 0).any()) or bool((n2 == 0).any()):
        raise ValueError("zero-norm embedding cannot be normalised")
    diff = e1 / n1 - e2 / n2
    # sqrt has an infinite derivative at 0; route exact zeros through a safe branch
    sq = (diff**2).sum(dim=-1)
    safe = torch.where(sq > 0, sq, torch.ones_like(sq))
    return torch.where(sq > 0, safe.sqrt(), torch.zeros_like(sq))


def contrastive_loss(i, e1: Tensor, e2: Tensor, m: float) -> Tensor:
    """``i * d^2 + (1 - i) * max(0, m - d)^2`` averaged over pairs.

    ``i`` is 1 for positive pairs and 0 for negatives; it may be a scalar or a
    tensor broadcastable against the pair axis.  ``e1``/``e2`` are single
    embeddings or ``(n_pairs, dim)`` stacks.
    """
    if not 0.0 <= m <= 2.0:
        raise ValueError(f"margin must lie in [0, 2], got {m}")
    d = normalized_distance(e1, e2)
    i = torch.as_tensor(i, dtype=d.dtype, device=d.device)
    per_pair = i * d**2 + (1 - i) * torch.clamp(m - d, min=0.0) ** 2
    return per_pair.mean()


def spgan_objective(adv_T, adv_S, cyc, ide, con, w: LossWeights):
    """Weighted sum of the five objectives; differentiable if the inputs are."""
    return adv_T + adv_S + w.lambda1 * cyc + w.lambda2 * ide + w.lambda3 * con


def _scalar(v: float | Tensor) -> float:
    return v.detach().item() if isinstance(v, Tensor) else float(v)


def total_spgan_loss(components: Mapping[str, float | Tensor], w: LossWeights) -> LossReport:
    """Build a :class:`LossReport` from ``adv_T, adv_S, cyc, ide, con``."""
    vals = {k: _scalar(components[k]) for k in ("adv_T", "adv_S", "cyc", "ide", "con")}
    vals["total"] = float(spgan_objective(**vals, w=w))
    for name, v in vals.items():
        if not math.isfinite(v):
            raise FloatingPointError(f"non-finite loss term {name}={v}")
    return LossReport(**vals)
