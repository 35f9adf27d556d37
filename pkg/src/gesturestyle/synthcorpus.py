"""Synthetic multimodal corpus with known, invertible per-speaker style transforms.

Every segment starts from a content latent: a handful of sinusoidal
components. The components drive

* a *base* gesture displacement for each joint / landmark (fixed mixing),
* a mel-like speech matrix (linear read-out of the components plus a
  smoothed energy envelope),
* a frame-aligned text matrix (random projection of the latent, constant
  over each "word" span).

The speaker's :class:`StyleFactors` are then applied to the base
displacement, per 2-D point, in this order:

1. causal exponential smoothing with coefficient ``smoothing``,
2. rotation by ``frequency_bias * t`` (a frequency shift of the complex
   signal ``x + iy``),
3. scaling by ``amplitude_scale``,
4. adding the rest pose and ``offset``.

All four steps are exactly invertible, which is what the transfer oracle
relies on.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import (
    CorpusManifest,
    FeatureBundle,
    Segment,
    default_tag_vocabulary,
    segment_path,
    write_bundle,
    write_manifest,
)

SIDECAR_NAME = "style_factors.json"

# 11 upper-body joints: neck, head, r_shoulder, r_elbow, r_wrist,
# l_shoulder, l_elbow, l_wrist, mid_hip, r_hip, l_hip (image coords, y down)
REST_POSE = np.array([
    [0.50, 0.34], [0.50, 0.22], [0.40, 0.36], [0.34, 0.48], [0.32, 0.60],
    [0.60, 0.36], [0.66, 0.48], [0.68, 0.60], [0.50, 0.66], [0.44, 0.66], [0.56, 0.66],
])
# 15 face landmarks: 5 jaw points, 2 brows, 4 eyelid points, nose tip, 3 mouth points
REST_FACE = np.array([
    [0.455, 0.215], [0.465, 0.245], [0.500, 0.262], [0.535, 0.245], [0.545, 0.215],
    [0.475, 0.188], [0.525, 0.188],
    [0.478, 0.198], [0.478, 0.204], [0.522, 0.198], [0.522, 0.204],
    [0.500, 0.220],
    [0.485, 0.238], [0.515, 0.238], [0.500, 0.242],
])


class NotSyntheticError(LookupError):
    """Segment has no entry in the generator sidecar."""


@dataclass
class StyleFactors:
    amplitude_scale: float
    offset: tuple[float, float]
    frequency_bias: float
    smoothing: float
    tag_profile: list[float]

    def __post_init__(self):
        if not self.amplitude_scale > 0:
            raise ValueError("amplitude_scale must be positive")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must lie in [0, 1)")
        self.offset = (float(self.offset[0]), float(self.offset[1]))

    @classmethod
    def identity(cls, n_tags: int = 38) -> "StyleFactors":
        return cls(1.0, (0.0, 0.0), 0.0, 0.0, [1.0 / n_tags] * n_tags)

    @classmethod
    def from_dict(cls, d: dict) -> "StyleFactors":
        return cls(float(d["amplitude_scale"]), tuple(d["offset"]), float(d["frequency_bias"]),
                   float(d["smoothing"]), [float(p) for p in d["tag_profile"]])


@dataclass
class SynthConfig:
    n_speakers: int = 4
    segments_per_speaker: int = 50
    seed: int = 7
    frames_per_segment: int = 64
    mel_bins: int = 128
    text_dim: int = 768
    n_tags: int = 38
    n_components: int = 3
    displacement_scale: float = 0.03
    speech_noise: float = 0.05
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    # every speaker draws segment i from the same content seed
    shared_content: bool = False
    speaker_prefix: str = "spk"
    factors: dict[str, dict] | None = field(default=None)

    def __post_init__(self):
        if self.n_speakers < 1 or self.segments_per_speaker < 1:
            raise ValueError("n_speakers and segments_per_speaker must be >= 1")

    def speaker_ids(self) -> list[str]:
        return [f"{self.speaker_prefix}{i:02d}" for i in range(self.n_speakers)]


# --------------------------------------------------------------------------
# style transform


def _ema(x: np.ndarray, alpha: float) -> np.ndarray:
    if alpha == 0.0:
        return x.copy()
    y = np.empty_like(x)
    y[0] = x[0]
    for t in range(1, x.shape[0]):
        y[t] = alpha * y[t - 1] + (1.0 - alpha) * x[t]
    return y


def _ema_inverse(y: np.ndarray, alpha: float) -> np.ndarray:
    if alpha == 0.0:
        return y.copy()
    x = np.empty_like(y)
    x[0] = y[0]
    x[1:] = (y[1:] - alpha * y[:-1]) / (1.0 - alpha)
    return x


def _rotate(d: np.ndarray, rate: float) -> np.ndarray:
    """Rotate every 2-D point of ``d`` (T, J, 2) by ``rate * t`` radians."""
    theta = rate * np.arange(d.shape[0])
    c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
    x, y = d[..., 0], d[..., 1]
    return np.stack([c * x - s * y, s * x + c * y], axis=-1)


def apply_style(displacement: np.ndarray, factors: StyleFactors, rest: np.ndarray) -> np.ndarray:
    """Base displacement (T, J*2) -> styled absolute coordinates (T, J*2)."""
    T = displacement.shape[0]
    d = np.asarray(displacement, dtype=np.float64).reshape(T, -1, 2)
    d = _ema(d, factors.smoothing)
    d = _rotate(d, factors.frequency_bias)
    out = rest[None] + np.asarray(factors.offset)[None, None] + factors.amplitude_scale * d
    return out.reshape(T, -1)


def invert_style(coords: np.ndarray, factors: StyleFactors, rest: np.ndarray) -> np.ndarray:
    T = coords.shape[0]
    d = np.asarray(coords, dtype=np.float64).reshape(T, -1, 2)
    d = (d - rest[None] - np.asarray(factors.offset)[None, None]) / factors.amplitude_scale
    d = _rotate(d, -factors.frequency_bias)
    d = _ema_inverse(d, factors.smoothing)
    return d.reshape(T, -1)


def restyle(bundle: FeatureBundle, from_factors: StyleFactors, to_factors: StyleFactors) -> FeatureBundle:
    """Swap the style of a bundle's gesture streams; other streams are kept."""
    pose = apply_style(invert_style(bundle.pose, from_factors, REST_POSE), to_factors, REST_POSE)
    face = apply_style(invert_style(bundle.face, from_factors, REST_FACE), to_factors, REST_FACE)
    return FeatureBundle(bundle.speech, bundle.text, pose, face, bundle.tags)


# --------------------------------------------------------------------------
# generation


@dataclass
class _Mixing:
    pose: np.ndarray     # (22, C)
    face: np.ndarray     # (30, C)
    speech: np.ndarray   # (M, C)
    envelope: np.ndarray  # (M,)
    text: np.ndarray     # (text_dim, 3C + 2)


def _mixing(cfg: SynthConfig) -> _Mixing:
    rng = np.random.default_rng([cfg.seed, 0xC0FFEE])
    C = cfg.n_components
    pose = rng.normal(size=(REST_POSE.size, C)) / np.sqrt(C)
    # lower body barely moves
    pose[16:] *= 0.15
    face = rng.normal(size=(REST_FACE.size, C)) / np.sqrt(C) * 0.3
    speech = rng.normal(size=(cfg.mel_bins, C))
    envelope = np.abs(rng.normal(size=cfg.mel_bins))
    text = rng.normal(size=(cfg.text_dim, 3 * C + 2)) / np.sqrt(3 * C + 2)
    return _Mixing(pose, face, speech, envelope, text)


def content_components(content_seed: int, cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return the sinusoidal components (T, C) and the latent vector of one segment."""
    rng = np.random.default_rng([cfg.seed, 0xC047E47, content_seed])
    C = cfg.n_components
    amp = rng.uniform(0.5, 1.5, size=C)
    freq = rng.uniform(0.08, 0.30, size=C)
    phase = rng.uniform(0.0, 2 * np.pi, size=C)
    t = np.arange(cfg.frames_per_segment)[:, None]
    comps = amp * np.sin(freq * t + phase)
    latent = np.concatenate([amp, np.cos(phase) * amp, np.sin(phase) * amp, [freq.mean() * 5, 1.0]])
    return comps, latent


def base_displacement(content_seed: int, cfg: SynthConfig, mixing: _Mixing | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Unstyled pose (T, 22) and face (T, 30) displacements of a content seed."""
    mixing = mixing or _mixing(cfg)
    comps, _ = content_components(content_seed, cfg)
    s = cfg.displacement_scale
    return s * comps @ mixing.pose.T, s * comps @ mixing.face.T


def _speech_text(content_seed: int, cfg: SynthConfig, mixing: _Mixing, noise_rng) -> tuple[np.ndarray, np.ndarray]:
    comps, latent = content_components(content_seed, cfg)
    T = cfg.frames_per_segment
    energy = _ema(np.sqrt((comps ** 2).sum(axis=1, keepdims=True)), 0.7)
    speech = comps @ mixing.speech.T + energy * mixing.envelope[None]
    speech = speech + cfg.speech_noise * noise_rng.normal(size=speech.shape)
    # "words" of 4..10 frames, each carrying the latent plus a little word-level jitter
    text = np.empty((T, cfg.text_dim))
    t = 0
    while t < T:
        span = int(noise_rng.integers(4, 11))
        word = latent + 0.1 * noise_rng.normal(size=latent.shape)
        text[t:t + span] = mixing.text @ word
        t += span
    return speech, text


def sample_style_factors(cfg: SynthConfig) -> dict[str, StyleFactors]:
    """Spread speaker styles over a stratified design so no two speakers coincide."""
    rng = np.random.default_rng([cfg.seed, 0x57E1E])
    n = cfg.n_speakers
    amps = np.geomspace(0.6, 2.0, n) if n > 1 else np.array([1.0])
    amps = amps[rng.permutation(n)]
    angles = 2 * np.pi * (np.arange(n) + rng.uniform(0.0, 0.5, size=n)) / n
    radius = rng.uniform(0.04, 0.07, size=n)
    biases = (np.linspace(-0.03, 0.03, n) if n > 1 else np.zeros(1))[rng.permutation(n)]
    smooth = (np.linspace(0.0, 0.6, n) if n > 1 else np.zeros(1))[rng.permutation(n)]
    out = {}
    for i, spk in enumerate(cfg.speaker_ids()):
        profile = rng.dirichlet(np.full(cfg.n_tags, 0.3))
        out[spk] = StyleFactors(float(amps[i]), (float(radius[i] * np.cos(angles[i])), float(radius[i] * np.sin(angles[i]))),
                                float(biases[i]), float(smooth[i]), profile.tolist())
    if cfg.factors:
        for spk, d in cfg.factors.items():
            out[spk] = StyleFactors.from_dict(d)
    return out


def _content_seed(cfg: SynthConfig, spk_index: int, seg_index: int) -> int:
    if cfg.shared_content:
        return seg_index
    return spk_index * 1_000_003 + seg_index


def make_segment(cfg: SynthConfig, speaker: str, spk_index: int, seg_index: int, factors: StyleFactors,
                 mixing: _Mixing) -> tuple[Segment, int]:
    cseed = _content_seed(cfg, spk_index, seg_index)
    rng = np.random.default_rng([cfg.seed, spk_index, seg_index, 1])
    speech, text = _speech_text(cseed, cfg, mixing, rng)
    dpose, dface = base_displacement(cseed, cfg, mixing)
    pose = apply_style(dpose, factors, REST_POSE)
    face = apply_style(dface, factors, REST_FACE)
    n_active = int(rng.integers(1, 4))
    picked = rng.choice(cfg.n_tags, size=n_active, replace=False, p=np.asarray(factors.tag_profile))
    tags = np.zeros(cfg.n_tags)
    tags[picked] = 1.0
    bundle = FeatureBundle(speech, text, pose, face, tags)
    return Segment(speaker, f"seg{seg_index:04d}", bundle), cseed


def _split_ids(ids: list[str], fractions: tuple[float, float, float]) -> dict[str, list[str]]:
    n = len(ids)
    n_train = max(1, int(round(fractions[0] * n))) if n > 2 else n
    n_val = int(round(fractions[1] * n)) if n > 2 else 0
    n_val = min(n_val, n - n_train)
    return {"train": ids[:n_train], "val": ids[n_train:n_train + n_val], "test": ids[n_train + n_val:]}


def generate_synthetic_corpus(cfg: SynthConfig, root: str | Path) -> CorpusManifest:
    """Write a corpus plus the ``style_factors.json`` sidecar under ``root``."""
    root = Path(root)
    mixing = _mixing(cfg)
    factors = sample_style_factors(cfg)
    speakers = cfg.speaker_ids()
    splits = {}
    seeds: dict[str, dict[str, int]] = {}
    for si, spk in enumerate(speakers):
        ids = []
        seeds[spk] = {}
        for j in range(cfg.segments_per_speaker):
            seg, cseed = make_segment(cfg, spk, si, j, factors[spk], mixing)
            write_bundle(segment_path(root, spk, seg.segment_id), seg.bundle)
            ids.append(seg.segment_id)
            seeds[spk][seg.segment_id] = cseed
        splits[spk] = _split_ids(ids, cfg.split_fractions)
    manifest = CorpusManifest(
        speakers=speakers, splits=splits, frames_per_segment=cfg.frames_per_segment, mel_bins=cfg.mel_bins,
        text_dim=cfg.text_dim, pose_dim=REST_POSE.size, face_dim=REST_FACE.size,
        tag_vocabulary=default_tag_vocabulary(cfg.n_tags),
    )
    write_manifest(root, manifest)
    cfg_dict = asdict(cfg)
    cfg_dict["factors"] = None
    sidecar = {
        "generator": cfg_dict,
        "speakers": {spk: asdict(f) for spk, f in factors.items()},
        "content_seeds": seeds,
    }
    (root / SIDECAR_NAME).write_text(json.dumps(sidecar, indent=2), encoding="utf-8")
    return manifest


# --------------------------------------------------------------------------
# ground truth


@dataclass
class SynthSidecar:
    config: SynthConfig
    factors: dict[str, StyleFactors]
    content_seeds: dict[str, dict[str, int]]

    @classmethod
    def load(cls, root: str | Path) -> "SynthSidecar":
        path = Path(root) / SIDECAR_NAME
        if not path.is_file():
            raise NotSyntheticError(f"no {SIDECAR_NAME} under {root}")
        d = json.loads(path.read_text(encoding="utf-8"))
        g = dict(d["generator"])
        g["split_fractions"] = tuple(g["split_fractions"])
        return cls(SynthConfig(**g), {k: StyleFactors.from_dict(v) for k, v in d["speakers"].items()},
                   {k: {s: int(c) for s, c in v.items()} for k, v in d["content_seeds"].items()})

    def content_seed(self, segment: Segment) -> int:
        try:
            return self.content_seeds[segment.speaker_id][segment.segment_id]
        except KeyError:
            raise NotSyntheticError(f"{segment.speaker_id}/{segment.segment_id} was not produced by this generator") from None

    def base(self, segment: Segment) -> tuple[np.ndarray, np.ndarray]:
        return base_displacement(self.content_seed(segment), self.config)


def oracle_style_transfer(source: Segment, target_factors: StyleFactors, sidecar: SynthSidecar) -> FeatureBundle:
    """The ideal transfer: the source's base gestures rendered with the target's style."""
    dpose, dface = sidecar.base(source)
    b = source.bundle
    return FeatureBundle(b.speech, b.text, apply_style(dpose, target_factors, REST_POSE),
                         apply_style(dface, target_factors, REST_FACE), b.tags)
