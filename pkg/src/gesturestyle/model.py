"""The assembled style-transfer network and its inference path."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .corpus import CorpusManifest, DimensionError, FeatureBundle, NormalizationStats
from .disentangle import Discriminator
from .encoders import ContentEncoder, EncoderConfig, StyleEncoder
from .generator import Fusion, GeneratorConfig, GestureDecoder, GestureOutput


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    disc_hidden: int = 256

    @property
    def d_model(self) -> int:
        return self.encoder.d_model

    @property
    def d_att(self) -> int:
        return self.encoder.d_att

    @property
    def style_dim(self) -> int:
        return self.encoder.style_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "ModelConfig":
        d = d or {}
        return cls(EncoderConfig(**d.get("encoder", {})), GeneratorConfig(**d.get("generator", {})),
                   int(d.get("disc_hidden", 256)))

    @classmethod
    def for_manifest(cls, manifest: CorpusManifest, d_model: int = 64, **overrides) -> "ModelConfig":
        enc = EncoderConfig(d_model=d_model, text_dim=manifest.text_dim, mel_bins=manifest.mel_bins,
                            pose_dim=manifest.pose_dim, face_dim=manifest.face_dim, n_tags=manifest.n_tags,
                            **overrides.pop("encoder", {}))
        return cls(enc, GeneratorConfig(**overrides.pop("generator", {})), **overrides)

    def check_manifest(self, manifest: CorpusManifest) -> None:
        e = self.encoder
        expected = {"mel_bins": e.mel_bins, "text_dim": e.text_dim, "pose_dim": e.pose_dim,
                    "face_dim": e.face_dim, "n_tags": e.n_tags}
        for name, want in expected.items():
            got = getattr(manifest, name)
            if got != want:
                raise DimensionError(f"corpus {name}={got} but model expects {want}")


class StyleTransferModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        e = cfg.encoder
        self.content_encoder = ContentEncoder(e)
        self.style_encoder = StyleEncoder(e)
        self.fusion = Fusion(e.d_att, e.style_dim, e.d_model)
        self.pose_decoder = GestureDecoder(e.d_model, e.pose_dim, cfg.generator)
        self.face_decoder = GestureDecoder(e.d_model, e.face_dim, cfg.generator)
        self.discriminator = Discriminator(e.d_att, e.style_dim, cfg.disc_hidden)

    def generator_parameters(self) -> list[nn.Parameter]:
        disc = {id(p) for p in self.discriminator.parameters()}
        return [p for p in self.parameters() if id(p) not in disc]

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        return {
            "content_speech": list(self.content_encoder.speech.parameters()),
            "content_attention": list(self.content_encoder.attention.parameters()),
            "style_speech": list(self.style_encoder.speech.parameters()),
            "style_attention": list(self.style_encoder.attention.parameters()),
            "style_pose_lstm": list(self.style_encoder.pose_lstm.parameters()),
            "style_face_lstm": list(self.style_encoder.face_lstm.parameters()),
            "fusion": list(self.fusion.parameters()),
            "pose_decoder": list(self.pose_decoder.parameters()),
            "face_decoder": list(self.face_decoder.parameters()),
            "discriminator": list(self.discriminator.parameters()),
        }

    def encode_content(self, speech, text):
        return self.content_encoder(speech, text)

    def encode_style(self, speech, text, pose, face, tags):
        return self.style_encoder(speech, text, pose, face, tags)

    def generate(self, h_content, h_style) -> GestureOutput:
        fused = self.fusion(h_content, h_style)
        return GestureOutput(self.pose_decoder(fused), self.face_decoder(fused))

    def decode(self, fused, head: str) -> torch.Tensor:
        if head == "pose":
            return self.pose_decoder(fused)
        if head == "face":
            return self.face_decoder(fused)
        raise ValueError(f"unknown decoder head {head!r}")


def build_model(cfg: ModelConfig, seed: int, dtype=torch.float32) -> StyleTransferModel:
    torch.manual_seed(seed)
    return StyleTransferModel(cfg).to(dtype)


# --------------------------------------------------------------------------
# inference


def check_bundle(bundle: FeatureBundle, cfg: ModelConfig, where: str = "segment") -> None:
    e = cfg.encoder
    for name, want in [("speech", e.mel_bins), ("text", e.text_dim), ("pose", e.pose_dim), ("face", e.face_dim)]:
        got = bundle.stream(name).shape[-1]
        if got != want:
            raise DimensionError(f"{where}: {name} has width {got}, checkpoint expects {want}")
    if bundle.tags.shape[-1] != e.n_tags:
        raise DimensionError(f"{where}: tags has length {bundle.tags.shape[-1]}, checkpoint expects {e.n_tags}")
    T = bundle.speech.shape[0]
    for name in ("text", "pose", "face"):
        if bundle.stream(name).shape[0] != T:
            raise DimensionError(f"{where}: {name} has {bundle.stream(name).shape[0]} frames, speech has {T}")


def stack_streams(bundles: Sequence[FeatureBundle], stats: NormalizationStats, dtype) -> dict[str, torch.Tensor]:
    out = {}
    for name in ("speech", "text", "pose", "face"):
        x = np.stack([np.asarray(b.stream(name), dtype=np.float64) for b in bundles])
        out[name] = torch.as_tensor(stats.apply(name, x), dtype=dtype)
    out["tags"] = torch.as_tensor(np.stack([np.asarray(b.tags, dtype=np.float64) for b in bundles]), dtype=dtype)
    return out


@torch.no_grad()
def style_vector(model: StyleTransferModel, stats: NormalizationStats, targets: Sequence[FeatureBundle]) -> torch.Tensor:
    """Mean style vector over ``targets`` (each encoded separately)."""
    dtype = next(model.parameters()).dtype
    x = stack_streams(targets, stats, dtype)
    h = model.encode_style(x["speech"], x["text"], x["pose"], x["face"], x["tags"])
    return h.mean(dim=0)


@torch.no_grad()
def transfer_batch(model: StyleTransferModel, stats: NormalizationStats, sources: Sequence[FeatureBundle],
                   styles: torch.Tensor) -> tuple[np.ndarray, np.ndarray]:
    """Decode each source's content with the matching row of ``styles``; returns raw-coordinate pose and face."""
    dtype = next(model.parameters()).dtype
    x = stack_streams(sources, stats, dtype)
    h_content = model.encode_content(x["speech"], x["text"])
    out = model.generate(h_content, styles.to(dtype))
    pose = stats.apply("pose", out.pose.double().numpy(), "inverse")
    face = stats.apply("face", out.face.double().numpy(), "inverse")
    return pose, face


def transfer_style(model: StyleTransferModel, stats: NormalizationStats, source: FeatureBundle,
                   targets: Sequence[FeatureBundle]) -> tuple[np.ndarray, np.ndarray]:
    """Source content rendered in the pooled style of ``targets``; works the same for unseen speakers."""
    if len(targets) == 0:
        raise ValueError("at least one target segment is required")
    check_bundle(source, model.cfg, "source")
    for i, t in enumerate(targets):
        check_bundle(t, model.cfg, f"target[{i}]")
    h = style_vector(model, stats, targets)
    pose, face = transfer_batch(model, stats, [source], h[None])
    return pose[0], face[0]
