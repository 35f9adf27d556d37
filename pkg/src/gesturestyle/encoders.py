"""Content and style encoders.

Content:  h_content = sa([speech_frames(X_speech), X_text])         (T x d_att)
Style:    h_style   = [mean_t sa([X_text, speech_frames(X_speech)]),
                       lstm_pose(X_pose), lstm_face(X_face), X_tags]  (D_s)

with d_att = d_model + text_dim and D_s = d_att + 2 d_model + K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F


@dataclass
class EncoderConfig:
    d_model: int = 64
    text_dim: int = 768
    mel_bins: int = 128
    pose_dim: int = 22
    face_dim: int = 30
    n_tags: int = 38
    n_heads: int = 4
    n_lstm_layers: int = 3
    speech_channels: int = 8
    positional_encoding: bool = True

    def __post_init__(self):
        if self.d_model <= 0:
            raise ValueError("d_model must be positive")

    @property
    def d_att(self) -> int:
        return self.d_model + self.text_dim

    @property
    def style_dim(self) -> int:
        return self.d_att + 2 * self.d_model + self.n_tags


def sinusoidal_positions(T: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(T, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / dim)
    pe = torch.zeros(T, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle)[:, : dim // 2]
    return pe.to(dtype)


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product attention over the time axis.

    If ``dim`` is not a multiple of ``n_heads`` the queries, keys and values
    are projected to the next multiple before splitting into heads; the output
    projection maps back to ``dim``.
    """

    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.inner = int(math.ceil(dim / n_heads) * n_heads)
        self.q = nn.Linear(dim, self.inner)
        self.k = nn.Linear(dim, self.inner)
        self.v = nn.Linear(dim, self.inner)
        self.out = nn.Linear(self.inner, dim)

    def forward(self, x: torch.Tensor, memory: torch.Tensor | None = None) -> torch.Tensor:
        memory = x if memory is None else memory
        B, T, _ = x.shape
        S = memory.shape[1]
        h, dh = self.n_heads, self.inner // self.n_heads
        q = self.q(x).view(B, T, h, dh).transpose(1, 2)
        k = self.k(memory).view(B, S, h, dh).transpose(1, 2)
        v = self.v(memory).view(B, S, h, dh).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        big = torch.finfo(scores.dtype).max / 2
        att = torch.softmax(torch.nan_to_num(scores, nan=0.0, posinf=big, neginf=-big), dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, T, self.inner)
        return self.out(y)


class SpeechFrameEncoder(nn.Module):
    """Trainable stand-in for a pretrained spectrogram transformer.

    Each frame's mel vector is treated as a 1-channel signal along frequency
    and passed through two stride-2 convolutions and a projection, giving one
    ``d_model`` vector per frame. Frames are encoded independently.
    """

    def __init__(self, mel_bins: int, d_model: int, channels: int = 8):
        super().__init__()
        self.mel_bins = mel_bins
        self.conv1 = nn.Conv1d(1, channels, kernel_size=5, stride=2, padding=2)
        self.conv2 = nn.Conv1d(channels, channels, kernel_size=5, stride=2, padding=2)
        width = (((mel_bins - 1) // 2 + 1) - 1) // 2 + 1
        self.proj = nn.Linear(channels * width + mel_bins, d_model)

    def forward(self, speech: torch.Tensor) -> torch.Tensor:
        if speech.shape[-1] != self.mel_bins:
            raise ValueError(f"speech has {speech.shape[-1]} mel bins, encoder expects {self.mel_bins}")
        B, T, M = speech.shape
        x = speech.reshape(B * T, 1, M)
        h = F.gelu(self.conv1(x))
        h = F.gelu(self.conv2(h))
        # skip path keeps the raw spectrum linearly available
        h = torch.cat([h.flatten(1), speech.reshape(B * T, M)], dim=1)
        return self.proj(h).view(B, T, -1)


def _check_frames(*xs: torch.Tensor) -> None:
    T = xs[0].shape[1]
    for x in xs[1:]:
        if x.shape[1] != T:
            raise ValueError(f"frame-count mismatch: {x.shape[1]} vs {T}")


class ContentEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.speech = SpeechFrameEncoder(cfg.mel_bins, cfg.d_model, cfg.speech_channels)
        self.attention = MultiHeadSelfAttention(cfg.d_att, cfg.n_heads)

    def forward(self, speech: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
        _check_frames(speech, text)
        if text.shape[-1] != self.cfg.text_dim:
            raise ValueError(f"text has width {text.shape[-1]}, expected {self.cfg.text_dim}")
        x = torch.cat([self.speech(speech), text], dim=-1)
        if self.cfg.positional_encoding:
            x = x + sinusoidal_positions(x.shape[1], x.shape[2], x.dtype)
        return x + self.attention(x)


class StyleEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.speech = SpeechFrameEncoder(cfg.mel_bins, cfg.d_model, cfg.speech_channels)
        self.attention = MultiHeadSelfAttention(cfg.d_att, cfg.n_heads)
        self.pose_lstm = nn.LSTM(cfg.pose_dim, cfg.d_model, cfg.n_lstm_layers, batch_first=True)
        self.face_lstm = nn.LSTM(cfg.face_dim, cfg.d_model, cfg.n_lstm_layers, batch_first=True)

    def forward(self, speech, text, pose, face, tags) -> torch.Tensor:
        _check_frames(speech, text, pose, face)
        cfg = self.cfg
        for name, x, d in [("text", text, cfg.text_dim), ("pose", pose, cfg.pose_dim), ("face", face, cfg.face_dim),
                           ("tags", tags, cfg.n_tags)]:
            if x.shape[-1] != d:
                raise ValueError(f"{name} has width {x.shape[-1]}, expected {d}")
        x = torch.cat([text, self.speech(speech)], dim=-1)
        if cfg.positional_encoding:
            x = x + sinusoidal_positions(x.shape[1], x.shape[2], x.dtype)
        pooled = (x + self.attention(x)).mean(dim=1)
        _, (hp, _) = self.pose_lstm(pose)
        _, (hf, _) = self.face_lstm(face)
        return torch.cat([pooled, hp[-1], hf[-1], tags.to(pooled.dtype)], dim=-1)

    def tag_slice(self) -> slice:
        start = self.cfg.d_att + 2 * self.cfg.d_model
        return slice(start, start + self.cfg.n_tags)


def encode_dialog_tags(tags: Iterable[str | int], vocabulary: Sequence[str]) -> np.ndarray:
    """Multi-hot vector over ``vocabulary``; integer entries are taken as indices."""
    out = np.zeros(len(vocabulary))
    index = {name: i for i, name in enumerate(vocabulary)}
    for tag in tags:
        if isinstance(tag, (int, np.integer)):
            if not 0 <= tag < len(vocabulary):
                raise KeyError(f"tag index {tag} outside vocabulary of size {len(vocabulary)}")
            out[tag] = 1.0
        elif tag in index:
            out[index[tag]] = 1.0
        else:
            raise KeyError(f"tag {tag!r} is not in the vocabulary")
    return out
