"""On-disk corpus of 64-frame multimodal segments, validation and normalization.

Layout of a corpus root::

    manifest.json
    segments/<speaker_id>/<segment_id>.tsty      (container version 1)
    [normalization.tsty]                          (optional, same container)

Each segment container holds, in order: speech (T x M), text (T x text_dim),
pose (T x 22), face (T x 30) and tags (1 x K).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Literal, Sequence

import numpy as np

from .container import ContainerError, read_matrices, write_matrices

STREAMS = ("speech", "text", "pose", "face")
MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "val", "test")
DEFAULT_EPSILON = 1e-8


class CorpusError(Exception):
    """Base class for corpus validation failures."""


class ManifestError(CorpusError):
    pass


class DimensionError(CorpusError):
    pass


class NonFiniteError(CorpusError):
    pass


class DuplicateSegmentError(CorpusError):
    pass


def default_tag_vocabulary(k: int = 38) -> list[str]:
    return [f"tag{i:02d}" for i in range(k)]


@dataclass
class CorpusManifest:
    speakers: list[str]
    splits: dict[str, dict[str, list[str]]]
    frames_per_segment: int = 64
    mel_bins: int = 128
    text_dim: int = 768
    pose_dim: int = 22
    face_dim: int = 30
    tag_vocabulary: list[str] = field(default_factory=default_tag_vocabulary)
    normalization_stats_path: str | None = None

    @property
    def n_tags(self) -> int:
        return len(self.tag_vocabulary)

    def stream_dims(self) -> dict[str, int]:
        return {"speech": self.mel_bins, "text": self.text_dim, "pose": self.pose_dim,
                "face": self.face_dim, "tags": self.n_tags}

    def segment_ids(self, speaker: str, split: str | None = None) -> list[str]:
        parts = self.splits[speaker]
        if split is not None:
            return list(parts.get(split, []))
        return [s for name in SPLITS for s in parts.get(name, [])] + \
            [s for name, ids in parts.items() if name not in SPLITS for s in ids]

    def check(self) -> None:
        if len(set(self.tag_vocabulary)) != len(self.tag_vocabulary):
            raise ManifestError("tag_vocabulary entries must be unique")
        if len(set(self.speakers)) != len(self.speakers):
            raise ManifestError("speaker ids must be unique")
        for spk in self.speakers:
            if spk not in self.splits:
                raise ManifestError(f"speaker {spk!r} has no split table")
            seen: set[str] = set()
            for name, ids in self.splits[spk].items():
                for sid in ids:
                    if sid in seen:
                        raise DuplicateSegmentError(f"speaker {spk!r}: segment id {sid!r} declared twice (split {name!r})")
                    seen.add(sid)
        for name, value in [("frames_per_segment", self.frames_per_segment), ("mel_bins", self.mel_bins),
                            ("text_dim", self.text_dim), ("pose_dim", self.pose_dim), ("face_dim", self.face_dim)]:
            if int(value) < 1:
                raise ManifestError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {"format": "tsty-corpus", "version": 1, **asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusManifest":
        try:
            return cls(
                speakers=list(d["speakers"]),
                splits={k: {s: list(v) for s, v in parts.items()} for k, parts in d["splits"].items()},
                frames_per_segment=int(d.get("frames_per_segment", 64)),
                mel_bins=int(d.get("mel_bins", 128)),
                text_dim=int(d.get("text_dim", 768)),
                pose_dim=int(d.get("pose_dim", 22)),
                face_dim=int(d.get("face_dim", 30)),
                tag_vocabulary=list(d.get("tag_vocabulary", default_tag_vocabulary())),
                normalization_stats_path=d.get("normalization_stats_path"),
            )
        except (KeyError, TypeError, AttributeError) as e:
            raise ManifestError(f"malformed manifest: {e!r}") from e


@dataclass(frozen=True)
class FeatureBundle:
    speech: np.ndarray
    text: np.ndarray
    pose: np.ndarray
    face: np.ndarray
    tags: np.ndarray

    def stream(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def matrices(self) -> list[np.ndarray]:
        return [self.speech, self.text, self.pose, self.face, np.asarray(self.tags).reshape(1, -1)]

    @classmethod
    def from_matrices(cls, mats: Sequence[np.ndarray]) -> "FeatureBundle":
        speech, text, pose, face, tags = mats
        return cls(speech, text, pose, face, np.asarray(tags).reshape(-1))

    def validate(self, manifest: CorpusManifest, where: str = "segment") -> None:
        T = manifest.frames_per_segment
        dims = manifest.stream_dims()
        for name in STREAMS:
            m = self.stream(name)
            if m.ndim != 2 or m.shape != (T, dims[name]):
                raise DimensionError(f"{where}: {name} has shape {tuple(m.shape)}, expected ({T}, {dims[name]})")
        if self.tags.shape != (dims["tags"],):
            raise DimensionError(f"{where}: tags has length {self.tags.shape}, expected {dims['tags']}")
        for name in (*STREAMS, "tags"):
            m = self.stream(name)
            bad = ~np.isfinite(m)
            if bad.any():
                idx = np.argwhere(bad)[0]
                raise NonFiniteError(f"{where}: non-finite value in {name} at index {tuple(int(i) for i in idx)}")
        if not np.isin(self.tags, (0.0, 1.0)).all():
            raise DimensionError(f"{where}: tags must be binary")


@dataclass(frozen=True)
class Segment:
    speaker_id: str
    segment_id: str
    bundle: FeatureBundle


def segment_path(root: str | Path, speaker: str, segment_id: str) -> Path:
    return Path(root) / "segments" / speaker / f"{segment_id}.tsty"


def read_bundle(path: str | Path) -> FeatureBundle:
    bundle = FeatureBundle.from_matrices(read_matrices(path))
    for name in (*STREAMS, "tags"):
        bundle.stream(name).setflags(write=False)
    return bundle


def write_bundle(path: str | Path, bundle: FeatureBundle) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    write_matrices(path, bundle.matrices())


def write_manifest(root: str | Path, manifest: CorpusManifest) -> None:
    Path(root).mkdir(parents=True, exist_ok=True)
    (Path(root) / MANIFEST_NAME).write_text(json.dumps(manifest.to_dict(), indent=2), encoding="utf-8")


def read_manifest(root: str | Path) -> CorpusManifest:
    path = Path(root) / MANIFEST_NAME
    if not path.is_file():
        raise ManifestError(f"missing manifest: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON ({e})") from e
    manifest = CorpusManifest.from_dict(d)
    manifest.check()
    return manifest


class SegmentAccessor:
    """Lazy, read-only view over the segments declared in a manifest."""

    def __init__(self, root: str | Path, manifest: CorpusManifest):
        self.root = Path(root)
        self.manifest = manifest
        self._keys = [(spk, sid) for spk in manifest.speakers for sid in manifest.segment_ids(spk)]

    def __len__(self) -> int:
        return len(self._keys)

    def keys(self) -> list[tuple[str, str]]:
        return list(self._keys)

    def get(self, speaker: str, segment_id: str) -> Segment:
        path = segment_path(self.root, speaker, segment_id)
        try:
            bundle = read_bundle(path)
        except (OSError, ContainerError) as e:
            raise CorpusError(f"{speaker}/{segment_id}: unreadable ({e})") from e
        bundle.validate(self.manifest, where=f"{speaker}/{segment_id}")
        return Segment(speaker, segment_id, bundle)

    def __getitem__(self, key: tuple[str, str]) -> Segment:
        return self.get(*key)

    def __iter__(self) -> Iterator[Segment]:
        for key in self._keys:
            yield self.get(*key)

    def split(self, speaker: str, split: str) -> list[Segment]:
        return [self.get(speaker, sid) for sid in self.manifest.segment_ids(speaker, split)]

    def bundles(self, split: str, speakers: Iterable[str] | None = None) -> list[FeatureBundle]:
        speakers = self.manifest.speakers if speakers is None else speakers
        return [seg.bundle for spk in speakers for seg in self.split(spk, split)]


def validate_and_load_corpus(root: str | Path) -> tuple[CorpusManifest, SegmentAccessor]:
    """Read the manifest and check every declared segment; returns the manifest and a lazy accessor."""
    root = Path(root)
    manifest = read_manifest(root)
    accessor = SegmentAccessor(root, manifest)
    for spk, sid in accessor.keys():
        if not segment_path(root, spk, sid).is_file():
            raise CorpusError(f"{spk}/{sid}: declared in manifest but missing on disk")
        accessor.get(spk, sid)
    return manifest, accessor


def write_corpus(root: str | Path, manifest: CorpusManifest, segments: Iterable[Segment]) -> None:
    for seg in segments:
        write_bundle(segment_path(root, seg.speaker_id, seg.segment_id), seg.bundle)
    write_manifest(root, manifest)


# --------------------------------------------------------------------------
# normalization


@dataclass
class NormalizationStats:
    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]
    epsilon: float = DEFAULT_EPSILON

    def check(self, dims: dict[str, int] | None = None) -> None:
        for name in STREAMS:
            if np.any(self.std[name] < self.epsilon):
                raise ValueError(f"{name}: std below epsilon")
            if dims is not None and self.mean[name].shape != (dims[name],):
                raise DimensionError(f"normalization stats for {name} have {self.mean[name].shape[0]} channels, "
                                     f"expected {dims[name]}")

    def dims(self) -> dict[str, int]:
        return {name: int(self.mean[name].shape[0]) for name in STREAMS}

    def apply(self, name: str, x, direction: Literal["forward", "inverse"] = "forward"):
        """Normalize one stream; works on numpy arrays or torch tensors with channels last."""
        mean, std = self.mean[name], self.std[name]
        if x.shape[-1] != mean.shape[0]:
            raise DimensionError(f"{name}: {x.shape[-1]} channels, stats have {mean.shape[0]}")
        if not isinstance(x, np.ndarray):
            import torch
            mean = torch.as_tensor(mean, dtype=x.dtype)
            std = torch.as_tensor(std, dtype=x.dtype)
        if direction == "forward":
            return (x - mean) / (2.0 * std)
        if direction == "inverse":
            return x * (2.0 * std) + mean
        raise ValueError(f"unknown direction {direction!r}")

    def save(self, path: str | Path) -> None:
        mats = [np.stack([self.mean[n], self.std[n]]) for n in STREAMS]
        write_matrices(path, [*mats, np.array([[self.epsilon]])])

    @classmethod
    def load(cls, path: str | Path) -> "NormalizationStats":
        mats = read_matrices(path)
        mean = {n: mats[i][0].astype(np.float64) for i, n in enumerate(STREAMS)}
        std = {n: mats[i][1].astype(np.float64) for i, n in enumerate(STREAMS)}
        return cls(mean, std, float(mats[4][0, 0]))

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for n in STREAMS:
            out[f"norm/{n}/mean"] = self.mean[n]
            out[f"norm/{n}/std"] = self.std[n]
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], epsilon: float) -> "NormalizationStats":
        return cls({n: np.asarray(arrays[f"norm/{n}/mean"], dtype=np.float64) for n in STREAMS},
                   {n: np.asarray(arrays[f"norm/{n}/std"], dtype=np.float64) for n in STREAMS}, epsilon)


def compute_normalization_stats(bundles: Sequence[FeatureBundle],
                                epsilon: float = DEFAULT_EPSILON) -> NormalizationStats:
    """Per-channel mean and std over every frame of the given (train) bundles.

    Each bundle is reduced exactly (two-pass, float64) and the partial moments
    are merged pairwise, so memory stays at one bundle.
    """
    if len(bundles) == 0:
        raise ValueError("cannot compute normalization stats from zero segments")
    mean: dict[str, np.ndarray] = {}
    std: dict[str, np.ndarray] = {}
    for name in STREAMS:
        n_tot = 0
        mu = None
        m2 = None
        width = None
        for b in bundles:
            x = np.asarray(b.stream(name), dtype=np.float64)
            if width is None:
                width = x.shape[1]
            elif x.shape[1] != width:
                raise DimensionError(f"{name}: inconsistent channel count {x.shape[1]} vs {width}")
            n = x.shape[0]
            mb = x.mean(axis=0)
            m2b = ((x - mb) ** 2).sum(axis=0)
            if mu is None:
                n_tot, mu, m2 = n, mb, m2b
                continue
            delta = mb - mu
            tot = n_tot + n
            mu = mu + delta * (n / tot)
            m2 = m2 + m2b + delta ** 2 * (n_tot * n / tot)
            n_tot = tot
        mean[name] = mu
        std[name] = np.maximum(np.sqrt(m2 / n_tot), epsilon)
    return NormalizationStats(mean, std, epsilon)


def normalize_bundle(bundle: FeatureBundle, stats: NormalizationStats,
                     direction: Literal["forward", "inverse"] = "forward") -> FeatureBundle:
    """Map each stream x -> (x - mean) / (2 std) (or back); tags pass through untouched."""
    streams = {name: stats.apply(name, np.asarray(bundle.stream(name), dtype=np.float64), direction)
               for name in STREAMS}
    return replace(bundle, **streams)
