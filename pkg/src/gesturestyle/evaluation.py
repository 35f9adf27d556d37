"""Objective evaluation: transfer-strength classifier, content preservation,
Minkowski distances, kinematics and embedding export."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import FeatureBundle, NormalizationStats, SegmentAccessor
from .model import StyleTransferModel, check_bundle, stack_streams, transfer_batch


# --------------------------------------------------------------------------
# distances


def _segments(x) -> np.ndarray:
    """(N, ...) flattened per segment; inputs with ndim <= 2 are a single segment."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim <= 2:
        return x.reshape(1, -1)
    return x.reshape(x.shape[0], -1)


def minkowski_distance(a, b, p: float = 2.0) -> float:
    """Per-segment Minkowski distance of the flattened streams, averaged over segments."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if p < 1:
        raise ValueError("Minkowski order must be >= 1")
    d = np.abs(_segments(a) - _segments(b))
    return float(np.mean(np.sum(d ** p, axis=1) ** (1.0 / p)))


def cosine_distances(source, predicted) -> np.ndarray:
    s, z = _segments(source), _segments(predicted)
    if s.shape != z.shape:
        raise ValueError(f"shape mismatch {np.shape(source)} vs {np.shape(predicted)}")
    ns, nz = np.linalg.norm(s, axis=1), np.linalg.norm(z, axis=1)
    if np.any(ns == 0) or np.any(nz == 0):
        raise ValueError("cosine distance undefined for a zero-norm segment")
    return 1.0 - np.sum(s * z, axis=1) / (ns * nz)


def content_preservation(source, predicted) -> tuple[float, float]:
    """(mean cosine distance, mean of max(0, 1 - distance) in percent)."""
    d = cosine_distances(source, predicted)
    return float(d.mean()), float(np.mean(np.maximum(0.0, 1.0 - d)) * 100.0)


# --------------------------------------------------------------------------
# kinematics


@dataclass
class KinematicProfile:
    velocity: float
    acceleration: float
    jerk: float


def finite_differences(stream, fps: float = 15.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First, second and third forward differences along time, scaled by fps, fps^2, fps^3."""
    x = np.asarray(stream, dtype=np.float64)
    if x.shape[-2] < 4:
        raise ValueError(f"need at least 4 frames for jerk, got {x.shape[-2]}")
    v = np.diff(x, n=1, axis=-2) * fps
    a = np.diff(x, n=2, axis=-2) * fps ** 2
    j = np.diff(x, n=3, axis=-2) * fps ** 3
    return v, a, j


def kinematics_profile(stream, fps: float = 15.0, point_dim: int = 2) -> KinematicProfile:
    """Mean magnitude of velocity, acceleration and jerk over points and frames.

    ``stream`` is (T, D) or (N, T, D); consecutive groups of ``point_dim``
    channels form one point (2 for x/y coordinates).
    """
    x = np.asarray(stream, dtype=np.float64)
    if x.shape[-1] % point_dim:
        raise ValueError(f"{x.shape[-1]} channels do not split into {point_dim}-D points")
    mags = []
    for d in finite_differences(x, fps):
        d = d.reshape(*d.shape[:-1], -1, point_dim)
        mags.append(float(np.linalg.norm(d, axis=-1).mean()))
    return KinematicProfile(*mags)


# --------------------------------------------------------------------------
# transfer-strength classifier


@dataclass
class ClassifierConfig:
    hidden: int = 32
    n_layers: int = 3
    batch_size: int = 256
    epochs: int = 40
    lr: float = 5e-3
    threshold: float = 0.5
    seed: int = 0


class StyleClassifier(nn.Module):
    """Three stacked LSTMs and a dense sigmoid output over per-frame pose+face."""

    def __init__(self, in_dim: int, cfg: ClassifierConfig, mean: np.ndarray, std: np.ndarray):
        super().__init__()
        self.cfg = cfg
        self.register_buffer("mean", torch.as_tensor(mean, dtype=torch.float32))
        self.register_buffer("std", torch.as_tensor(std, dtype=torch.float32))
        self.lstm = nn.LSTM(in_dim, cfg.hidden, cfg.n_layers, batch_first=True)
        self.out = nn.Linear(cfg.hidden, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, _ = self.lstm((x - self.mean) / self.std)
        return torch.sigmoid(self.out(h[:, -1])).squeeze(-1)

    @torch.no_grad()
    def predict(self, gestures) -> np.ndarray:
        self.eval()
        x = torch.as_tensor(np.asarray(gestures, dtype=np.float32))
        return self(x).double().numpy()


def gesture_matrix(pose, face) -> np.ndarray:
    """Per-frame concatenation of pose and face, (..., T, 52)."""
    return np.concatenate([np.asarray(pose, dtype=np.float64), np.asarray(face, dtype=np.float64)], axis=-1)


def train_style_classifier(source, target, cfg: ClassifierConfig | None = None) -> StyleClassifier:
    """Binary classifier: source gestures -> output <= 0.5, target gestures -> output > 0.5."""
    cfg = cfg or ClassifierConfig()
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if len(source) == 0 or len(target) == 0:
        raise ValueError("both classes need at least one segment")
    x = np.concatenate([source, target])
    y = np.concatenate([np.zeros(len(source)), np.ones(len(target))])
    flat = x.reshape(-1, x.shape[-1])
    torch.manual_seed(cfg.seed)
    clf = StyleClassifier(x.shape[-1], cfg, flat.mean(axis=0), flat.std(axis=0) + 1e-6)
    opt = torch.optim.Adam(clf.parameters(), lr=cfg.lr)
    xt = torch.as_tensor(x, dtype=torch.float32)
    yt = torch.as_tensor(y, dtype=torch.float32)
    rng = np.random.default_rng(cfg.seed)
    bce = nn.BCELoss()
    clf.train()
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), cfg.batch_size):
            idx = torch.as_tensor(order[start:start + cfg.batch_size])
            opt.zero_grad()
            loss = bce(clf(xt[idx]), yt[idx])
            loss.backward()
            opt.step()
    clf.eval()
    return clf


def accuracy_from_outputs(outputs, threshold: float = 0.5) -> float:
    outputs = np.asarray(outputs, dtype=np.float64).reshape(-1)
    if outputs.size == 0:
        raise ValueError("no outputs to score")
    return 100.0 * float(np.count_nonzero(outputs > threshold)) / outputs.size


def transfer_strength_accuracy(classifier: Callable[[np.ndarray], np.ndarray], transferred,
                               threshold: float = 0.5) -> float:
    """Percentage of transferred gestures the pair classifier assigns to the target style."""
    if len(transferred) == 0:
        raise ValueError("no transferred gestures to score")
    return accuracy_from_outputs(classifier(np.asarray(transferred)), threshold)


# --------------------------------------------------------------------------
# full pair evaluation


@dataclass
class EvalConfig:
    fps: float = 15.0
    minkowski_p: float = 2.0
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    @classmethod
    def from_dict(cls, d: dict | None) -> "EvalConfig":
        d = dict(d or {})
        clf = ClassifierConfig(**d.pop("classifier", {}))
        return cls(classifier=clf, **d)


@dataclass
class MetricReport:
    source_speaker: str
    target_speaker: str
    n_segments: int
    transfer_strength_accuracy: float
    content_preservation: float
    cosine_distance: float
    dist_to_source: float
    dist_to_target: float
    classifier_accuracy: float
    kinematics: dict[str, dict[str, dict[str, float]]]
    dist_to_oracle: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _gestures(bundles: Sequence[FeatureBundle]) -> np.ndarray:
    return np.stack([gesture_matrix(b.pose, b.face) for b in bundles])


@torch.no_grad()
def predict_pairs(model: StyleTransferModel, stats: NormalizationStats, sources: Sequence[FeatureBundle],
                  targets: Sequence[FeatureBundle], chunk: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Transfer source i with the style of target i (one target segment per prediction)."""
    dtype = next(model.parameters()).dtype
    poses, faces = [], []
    for s in range(0, len(sources), chunk):
        tb = targets[s:s + chunk]
        x = stack_streams(tb, stats, dtype)
        h = model.encode_style(x["speech"], x["text"], x["pose"], x["face"], x["tags"])
        p, f = transfer_batch(model, stats, sources[s:s + chunk], h)
        poses.append(p)
        faces.append(f)
    return np.concatenate(poses), np.concatenate(faces)


def evaluate_pair(model: StyleTransferModel, stats: NormalizationStats, accessor: SegmentAccessor,
                  source: str, target: str, cfg: EvalConfig | None = None, oracle=None) -> MetricReport:
    """Score transfers of ``source`` test content into ``target`` style.

    ``oracle``, if given, maps (source Segment, target speaker) to the ideal
    transferred FeatureBundle; the report then carries the distance to it.
    """
    cfg = cfg or EvalConfig()
    clf = train_style_classifier(_gestures(accessor.bundles("train", [source])),
                                 _gestures(accessor.bundles("train", [target])), cfg.classifier)
    src_segs = accessor.split(source, "test")
    tgt_segs = accessor.split(target, "test")
    if not src_segs or not tgt_segs:
        raise ValueError(f"{source} or {target} has no test segments")
    tgt_segs = [tgt_segs[i % len(tgt_segs)] for i in range(len(src_segs))]
    src_b = [s.bundle for s in src_segs]
    tgt_b = [s.bundle for s in tgt_segs]

    held = np.concatenate([clf.predict(_gestures(src_b)) <= 0.5, clf.predict(_gestures(tgt_b)) > 0.5])
    pose, face = predict_pairs(model, stats, src_b, tgt_b)
    pred = gesture_matrix(pose, face)
    src_g, tgt_g = _gestures(src_b), _gestures(tgt_b)

    tsa = transfer_strength_accuracy(clf.predict, pred)
    cos_d, cp = content_preservation(src_g, pred)
    kin = {}
    for stream, sl in (("pose", slice(0, pose.shape[-1])), ("face", slice(pose.shape[-1], None))):
        kin[stream] = {name: asdict(kinematics_profile(g[..., sl], cfg.fps))
                       for name, g in (("source", src_g), ("target", tgt_g), ("prediction", pred))}
    d_oracle = None
    if oracle is not None:
        ideal = np.stack([gesture_matrix(*(lambda b: (b.pose, b.face))(oracle(s, target))) for s in src_segs])
        d_oracle = minkowski_distance(pred, ideal, cfg.minkowski_p)
    return MetricReport(source, target, len(src_segs), tsa, cp, cos_d,
                        minkowski_distance(pred, src_g, cfg.minkowski_p),
                        minkowski_distance(pred, tgt_g, cfg.minkowski_p),
                        100.0 * float(held.mean()), kin, d_oracle)


def summarize(reports: Sequence[MetricReport]) -> dict:
    keys = ["transfer_strength_accuracy", "content_preservation", "dist_to_source", "dist_to_target"]
    out = {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}
    if all(r.dist_to_oracle is not None for r in reports):
        out["dist_to_oracle"] = float(np.mean([r.dist_to_oracle for r in reports]))
    out["n_pairs"] = len(reports)
    return out


def write_report(path: str | Path, reports: Sequence[MetricReport]) -> None:
    payload = {"pairs": [r.to_dict() for r in reports], "summary": summarize(reports)}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


# --------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingTable:
    speakers: list[str]
    segment_ids: list[str]
    style: np.ndarray
    content: np.ndarray

    def __len__(self) -> int:
        return len(self.speakers)

    def write_tsv(self, path: str | Path) -> None:
        head = ["speaker_id", "segment_id"] + [f"style_{i}" for i in range(self.style.shape[1])] + \
            [f"content_{i}" for i in range(self.content.shape[1])]
        lines = ["\t".join(head)]
        for k in range(len(self)):
            vals = [repr(float(v)) for v in np.concatenate([self.style[k], self.content[k]])]
            lines.append("\t".join([self.speakers[k], self.segment_ids[k], *vals]))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read_tsv(cls, path: str | Path) -> "EmbeddingTable":
        rows = Path(path).read_text(encoding="utf-8").splitlines()
        head = rows[0].split("\t")
        n_style = sum(h.startswith("style_") for h in head)
        spk, sid, vals = [], [], []
        for r in rows[1:]:
            parts = r.split("\t")
            spk.append(parts[0])
            sid.append(parts[1])
            vals.append([float(v) for v in parts[2:]])
        v = np.asarray(vals)
        return cls(spk, sid, v[:, :n_style], v[:, n_style:])


@torch.no_grad()
def export_embeddings(model: StyleTransferModel, stats: NormalizationStats, segments, chunk: int = 32) -> EmbeddingTable:
    """Style vectors and time-pooled content matrices of each segment."""
    segments = list(segments)
    for seg in segments:
        check_bundle(seg.bundle, model.cfg, f"{seg.speaker_id}/{seg.segment_id}")
    dtype = next(model.parameters()).dtype
    styles, contents = [], []
    for s in range(0, len(segments), chunk):
        x = stack_streams([seg.bundle for seg in segments[s:s + chunk]], stats, dtype)
        styles.append(model.encode_style(x["speech"], x["text"], x["pose"], x["face"], x["tags"]).double().numpy())
        contents.append(model.encode_content(x["speech"], x["text"]).mean(dim=1).double().numpy())
    return EmbeddingTable([seg.speaker_id for seg in segments], [seg.segment_id for seg in segments],
                          np.concatenate(styles), np.concatenate(contents))


def nearest_centroid_accuracy(train_x, train_y, test_x, test_y) -> float:
    from sklearn.neighbors import NearestCentroid

    clf = NearestCentroid().fit(np.asarray(train_x), np.asarray(train_y))
    return 100.0 * float(np.mean(clf.predict(np.asarray(test_x)) == np.asarray(test_y)))


def project_2d(x: np.ndarray, method: str = "tsne", seed: int = 0) -> np.ndarray:
    if method == "pca":
        from sklearn.decomposition import PCA

        return PCA(n_components=2, random_state=seed).fit_transform(x)
    if method == "tsne":
        from sklearn.manifold import TSNE

        perplexity = float(min(30.0, max(2.0, (len(x) - 1) / 3)))
        return TSNE(n_components=2, random_state=seed, init="pca", perplexity=perplexity).fit_transform(x)
    raise ValueError(f"unknown projection {method!r}")
