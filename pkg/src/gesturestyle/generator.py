"""Content/style fusion, the pose and face decoders, and the reconstruction loss."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .encoders import MultiHeadSelfAttention


@dataclass
class GeneratorConfig:
    n_layers: int = 1
    n_heads: int = 2
    ffn_mult: int = 4
    output_init_scale: float = 1e-2

    def __post_init__(self):
        if min(self.n_layers, self.n_heads, self.ffn_mult) < 1:
            raise ValueError("generator sizes must be positive")


@dataclass
class GestureOutput:
    pose: torch.Tensor
    face: torch.Tensor


class Fusion(nn.Module):
    """Repeat h_style over time, concatenate with h_content, project to d_model."""

    def __init__(self, d_att: int, style_dim: int, d_model: int):
        super().__init__()
        self.d_att, self.style_dim = d_att, style_dim
        self.proj = nn.Linear(d_att + style_dim, d_model)

    def forward(self, h_content: torch.Tensor, h_style: torch.Tensor) -> torch.Tensor:
        if h_content.shape[-1] != self.d_att or h_style.shape[-1] != self.style_dim:
            raise ValueError(f"fusion expects content width {self.d_att} and style width {self.style_dim}, "
                             f"got {h_content.shape[-1]} and {h_style.shape[-1]}")
        T = h_content.shape[1]
        x = torch.cat([h_content, h_style[:, None, :].expand(-1, T, -1)], dim=-1)
        return self.proj(x)


class SafeLayerNorm(nn.LayerNorm):
    """LayerNorm that pre-scales rows with huge entries so the variance cannot overflow."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        amax = x.detach().abs().amax(dim=-1, keepdim=True)
        scale = torch.where(amax > 1e8, amax, torch.ones_like(amax))
        return super().forward(x / scale)


class DecoderBlock(nn.Module):
    """Pre-norm transformer decoder layer; the fused sequence is both target and memory."""

    def __init__(self, d_model: int, n_heads: int, ffn_mult: int):
        super().__init__()
        self.norm1 = SafeLayerNorm(d_model)
        self.self_attn = MultiHeadSelfAttention(d_model, n_heads)
        self.norm2 = SafeLayerNorm(d_model)
        self.norm_mem = SafeLayerNorm(d_model)
        self.cross_attn = MultiHeadSelfAttention(d_model, n_heads)
        self.norm3 = SafeLayerNorm(d_model)
        self.ffn = nn.Sequential(nn.Linear(d_model, ffn_mult * d_model), nn.GELU(),
                                 nn.Linear(ffn_mult * d_model, d_model))

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        x = x + self.self_attn(self.norm1(x))
        x = x + self.cross_attn(self.norm2(x), self.norm_mem(memory))
        return x + self.ffn(self.norm3(x))


class GestureDecoder(nn.Module):
    def __init__(self, d_model: int, out_dim: int, cfg: GeneratorConfig):
        super().__init__()
        self.blocks = nn.ModuleList([DecoderBlock(d_model, cfg.n_heads, cfg.ffn_mult) for _ in range(cfg.n_layers)])
        self.norm = SafeLayerNorm(d_model)
        self.head = nn.Linear(d_model, out_dim)
        with torch.no_grad():
            self.head.weight.mul_(cfg.output_init_scale)
            self.head.bias.zero_()

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        x = fused
        for block in self.blocks:
            x = block(x, fused)
        return self.head(self.norm(x))


def _frob(x: torch.Tensor) -> torch.Tensor:
    return torch.sqrt(x.flatten(1).pow(2).sum(dim=1))


def reconstruction_loss(prediction: GestureOutput, target: GestureOutput) -> torch.Tensor:
    """Batch mean of ||pose residual|| + ||face residual|| (Euclidean norm of the flattened sequence)."""
    for name in ("pose", "face"):
        p, t = getattr(prediction, name), getattr(target, name)
        if p.shape != t.shape:
            raise ValueError(f"{name}: prediction {tuple(p.shape)} vs target {tuple(t.shape)}")
    pose, face = prediction.pose - target.pose, prediction.face - target.face
    if pose.dim() == 2:
        pose, face = pose[None], face[None]
    return (_frob(pose) + _frob(face)).mean()
