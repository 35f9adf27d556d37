"""End-to-end synthetic experiment: generate, train, evaluate seen and unseen transfers, probe embeddings."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import validate_and_load_corpus
from .evaluation import (
    EvalConfig,
    evaluate_pair,
    export_embeddings,
    nearest_centroid_accuracy,
    summarize,
)
from .model import ModelConfig
from .synthcorpus import SynthConfig, SynthSidecar, generate_synthetic_corpus, oracle_style_transfer
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    synth: SynthConfig = field(default_factory=lambda: SynthConfig(
        n_speakers=5, segments_per_speaker=500, seed=7, mel_bins=32, text_dim=128))
    d_model: int = 16
    model_overrides: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        total_iterations=2000, seed=7, clr_max=2e-3, aug_shift=0.05, aug_scale=0.4,
        held_out_speakers=["spk04"]))
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        synth = dict(d.get("synth", {}))
        if "split_fractions" in synth:
            synth["split_fractions"] = tuple(synth["split_fractions"])
        base = cls()
        return cls(
            synth=SynthConfig(**{**asdict(base.synth), **synth}),
            d_model=int(d.get("d_model", base.d_model)),
            model_overrides=dict(d.get("model_overrides", {})),
            train=TrainConfig(**{**asdict(base.train), **d.get("train", {})}),
            eval=EvalConfig.from_dict(d.get("eval")),
        )

    def to_dict(self) -> dict:
        return asdict(self)


def run_experiment(cfg: ExperimentConfig, workdir: str | Path) -> dict:
    workdir = Path(workdir)
    corpus_root = workdir / "corpus"
    timings = {}
    t0 = time.perf_counter()
    if not (corpus_root / "manifest.json").is_file():
        generate_synthetic_corpus(cfg.synth, corpus_root)
    manifest, accessor = validate_and_load_corpus(corpus_root)
    timings["synth_and_validate_s"] = time.perf_counter() - t0

    model_cfg = ModelConfig.for_manifest(manifest, d_model=cfg.d_model, **json.loads(json.dumps(cfg.model_overrides)))
    t0 = time.perf_counter()
    result = train((manifest, accessor), model_cfg, cfg.train, log_path=workdir / "train_log.jsonl")
    timings["train_s"] = time.perf_counter() - t0
    result.checkpoint.save(workdir / "model.ckpt")
    model, stats = result.model, result.checkpoint.stats

    sidecar = SynthSidecar.load(corpus_root)

    def oracle(seg, target_speaker):
        return oracle_style_transfer(seg, sidecar.factors[target_speaker], sidecar)

    seen = [s for s in manifest.speakers if s not in cfg.train.held_out_speakers]
    unseen = list(cfg.train.held_out_speakers)
    t0 = time.perf_counter()
    seen_reports = [evaluate_pair(model, stats, accessor, a, b, cfg.eval, oracle)
                    for a in seen for b in seen if a != b]
    unseen_reports = [evaluate_pair(model, stats, accessor, a, b, cfg.eval, oracle) for b in unseen for a in seen]
    timings["eval_s"] = time.perf_counter() - t0

    train_emb = export_embeddings(model, stats, [s for spk in seen for s in accessor.split(spk, "train")])
    test_emb = export_embeddings(model, stats, [s for spk in seen for s in accessor.split(spk, "test")])
    probe_style = nearest_centroid_accuracy(train_emb.style, train_emb.speakers, test_emb.style, test_emb.speakers)
    probe_content = nearest_centroid_accuracy(train_emb.content, train_emb.speakers, test_emb.content,
                                              test_emb.speakers)
    test_emb.write_tsv(workdir / "embeddings_test.tsv")

    self_rec = [r["L_rec"] for r in result.log if r["batch"] == "self"]
    out = {
        "seen": summarize(seen_reports),
        "unseen": summarize(unseen_reports) if unseen_reports else None,
        "seen_pairs": [r.to_dict() for r in seen_reports],
        "unseen_pairs": [r.to_dict() for r in unseen_reports],
        "probe_style_accuracy": probe_style,
        "probe_content_accuracy": probe_content,
        "first_rec": float(np.mean(self_rec[:5])),
        "last_rec": float(np.mean(self_rec[-25:])),
        "timings": timings,
        "config": cfg.to_dict(),
    }
    (workdir / "experiment.json").write_text(json.dumps(out, indent=2, sort_keys=True), encoding="utf-8")
    return out
