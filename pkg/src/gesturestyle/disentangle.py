"""Fader-style adversarial disentanglement: a discriminator that regresses the
style vector from the (time-pooled) content matrix, its loss, the generator's
adversarial loss and the adversarial-weight ramp."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class AdversarialSchedule:
    lambda_step_increment: float = 0.01
    lambda_max: float = 1.0


def lambda_at_step(t: int, schedule: AdversarialSchedule | None = None) -> float:
    schedule = schedule or AdversarialSchedule()
    if t < 0:
        raise ValueError("step must be non-negative")
    return min(schedule.lambda_step_increment * t, schedule.lambda_max)


class Discriminator(nn.Module):
    def __init__(self, d_att: int, style_dim: int, hidden: int = 256):
        super().__init__()
        self.d_att = d_att
        self.net = nn.Sequential(
            nn.Linear(d_att, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, style_dim),
        )

    def forward(self, h_content: torch.Tensor) -> torch.Tensor:
        if h_content.shape[-1] != self.d_att:
            raise ValueError(f"discriminator expects width {self.d_att}, got {h_content.shape[-1]}")
        return self.net(h_content.mean(dim=-2))


def _check(h_style: torch.Tensor, predicted: torch.Tensor) -> None:
    if h_style.shape != predicted.shape:
        raise ValueError(f"style {tuple(h_style.shape)} vs prediction {tuple(predicted.shape)}")


def discriminator_loss(h_style: torch.Tensor, predicted: torch.Tensor) -> torch.Tensor:
    """Batch mean of the Euclidean style-prediction error."""
    _check(h_style, predicted)
    diff = h_style - predicted
    if diff.dim() == 1:
        diff = diff[None]
    return torch.sqrt(diff.pow(2).sum(dim=-1)).mean()


def normalized_error(h_style: torch.Tensor, predicted: torch.Tensor) -> torch.Tensor:
    r = (h_style - predicted).abs()
    return r / (1.0 + r)


def adversarial_loss(h_style: torch.Tensor, predicted: torch.Tensor) -> torch.Tensor:
    """RMS over dimensions of (1 - r/(1+r)), r = |h_style - predicted|; 1 for a perfect discriminator."""
    _check(h_style, predicted)
    e = normalized_error(h_style, predicted)
    if e.dim() == 1:
        e = e[None]
    return torch.sqrt((1.0 - e).pow(2).mean(dim=-1)).mean()


def total_generator_loss(rec, adv, lam: float):
    return rec + lam * adv
