"""Stick-figure frames for pose (11 joints) and face (15 landmarks) streams."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

POSE_JOINTS = ["neck", "head", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist",
               "mid_hip", "r_hip", "l_hip"]
POSE_EDGES = [(0, 1), (0, 2), (2, 3), (3, 4), (0, 5), (5, 6), (6, 7), (0, 8), (8, 9), (8, 10)]

FACE_LANDMARKS = ["jaw_r", "jaw_rl", "chin", "jaw_ll", "jaw_l", "brow_r", "brow_l", "eye_r_top", "eye_r_bottom",
                  "eye_l_top", "eye_l_bottom", "nose", "mouth_r", "mouth_l", "mouth_bottom"]
FACE_EDGES = [(0, 1), (1, 2), (2, 3), (3, 4), (7, 8), (9, 10), (12, 13), (13, 14), (14, 12)]


def _points(stream: np.ndarray, n: int) -> np.ndarray:
    stream = np.asarray(stream, dtype=np.float64)
    if stream.ndim != 2 or stream.shape[1] != 2 * n:
        raise ValueError(f"expected (T, {2 * n}) stream, got {stream.shape}")
    return stream.reshape(stream.shape[0], n, 2)


def _fit(points: np.ndarray, size: int, margin: float = 0.08):
    lo, hi = points.reshape(-1, 2).min(axis=0), points.reshape(-1, 2).max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    centre = (lo + hi) / 2
    scale = size * (1 - 2 * margin) / span

    def to_px(p):
        q = (p - centre) * scale + size / 2
        return float(q[0]), float(q[1])
    return to_px


def render_frames(pose: np.ndarray, face: np.ndarray, size: int = 256) -> list[Image.Image]:
    """One RGB image per frame; image y grows downwards like the input coordinates."""
    P, F = _points(pose, len(POSE_JOINTS)), _points(face, len(FACE_LANDMARKS))
    if P.shape[0] != F.shape[0]:
        raise ValueError(f"pose has {P.shape[0]} frames, face has {F.shape[0]}")
    to_px = _fit(np.concatenate([P, F], axis=1), size)
    frames = []
    for t in range(P.shape[0]):
        img = Image.new("RGB", (size, size), "white")
        draw = ImageDraw.Draw(img)
        for a, b in POSE_EDGES:
            draw.line([to_px(P[t, a]), to_px(P[t, b])], fill=(30, 30, 30), width=3)
        for a, b in FACE_EDGES:
            draw.line([to_px(F[t, a]), to_px(F[t, b])], fill=(200, 40, 40), width=1)
        for k in range(F.shape[1]):
            x, y = to_px(F[t, k])
            draw.ellipse([x - 1, y - 1, x + 1, y + 1], fill=(200, 40, 40))
        frames.append(img)
    return frames


def write_frames(pose, face, out_dir: str | Path, size: int = 256, every: int = 1) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, img in enumerate(render_frames(pose, face, size)):
        if t % every:
            continue
        p = out_dir / f"frame{t:04d}.png"
        img.save(p)
        paths.append(p)
    return paths
