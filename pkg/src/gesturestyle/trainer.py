"""Alternating discriminator / generator optimization with a triangular cyclical LR."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .container import read_archive, write_archive
from .corpus import (
    CorpusManifest,
    NormalizationStats,
    SegmentAccessor,
    compute_normalization_stats,
    validate_and_load_corpus,
)
from .disentangle import (
    AdversarialSchedule,
    adversarial_loss,
    discriminator_loss,
    lambda_at_step,
    total_generator_loss,
)
from .generator import GestureOutput, reconstruction_loss
from .model import ModelConfig, StyleTransferModel, build_model, stack_streams

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 24
    beta1: float = 0.95
    beta2: float = 0.999
    clr_base: float = 1e-7
    clr_max: float = 0.1
    clr_step_size: int = 196
    total_iterations: int = 78_400
    seed: int = 0
    checkpoint_every: int = 0
    precision: int = 32
    grad_clip: float = 5.0
    lambda_step_increment: float = 0.01
    lambda_max: float = 1.0
    held_out_speakers: list[str] = field(default_factory=list)
    # keypoint augmentation on self batches (0 disables): global shift in raw
    # coordinate units and max |log| amplitude scale about the segment mean
    aug_shift: float = 0.0
    aug_scale: float = 0.0

    def __post_init__(self):
        if not self.clr_base < self.clr_max:
            raise ValueError("clr_base must be below clr_max")
        if self.clr_step_size < 1:
            raise ValueError("clr_step_size must be >= 1")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        if self.aug_shift < 0 or self.aug_scale < 0:
            raise ValueError("augmentation ranges must be non-negative")

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == 64 else torch.float32

    @property
    def schedule(self) -> AdversarialSchedule:
        return AdversarialSchedule(self.lambda_step_increment, self.lambda_max)

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainConfig":
        return cls(**(d or {}))


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, record: dict):
        super().__init__(f"non-finite loss at step {step}: {record}")
        self.step = step
        self.record = record


def clr_learning_rate(step: int, cfg: TrainConfig) -> float:
    """Triangular cyclical learning rate."""
    st = cfg.clr_step_size
    cycle = math.floor(1 + step / (2 * st))
    x = abs(step / st - 2 * cycle + 1)
    return cfg.clr_base + (cfg.clr_max - cfg.clr_base) * max(0.0, 1 - x)


def config_hash(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    t = asdict(train_cfg)
    for k in ("total_iterations", "checkpoint_every"):
        t.pop(k)
    blob = json.dumps({"model": model_cfg.to_dict(), "train": t}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# data


class TrainingData:
    """Normalized train-split tensors, one block per training speaker."""

    def __init__(self, manifest: CorpusManifest, accessor: SegmentAccessor, stats: NormalizationStats,
                 speakers: list[str], dtype: torch.dtype, split: str = "train"):
        self.speakers = speakers
        self.stats = stats
        self.blocks = []
        self.ids = []
        for spk in speakers:
            segs = accessor.split(spk, split)
            if not segs:
                raise ValueError(f"speaker {spk} has no {split} segments")
            self.blocks.append(stack_streams([s.bundle for s in segs], stats, dtype))
            self.ids.append([s.segment_id for s in segs])

    def count(self, k: int) -> int:
        return self.blocks[k]["speech"].shape[0]

    def gather(self, spk_idx: np.ndarray, seg_idx: np.ndarray) -> dict[str, torch.Tensor]:
        out = {}
        for name in ("speech", "text", "pose", "face", "tags"):
            out[name] = torch.stack([self.blocks[s][name][i] for s, i in zip(spk_idx, seg_idx)])
        return out


def sample_batch(data: TrainingData, step: int, seed: int, batch_size: int, aug_shift: float = 0.0,
                 aug_scale: float = 0.0):
    """Batch for ``step``; even steps pair a segment with another segment of the
    same speaker (self-reconstruction), odd steps pair different speakers."""
    rng = np.random.default_rng([seed, step])
    n_spk = len(data.speakers)
    kind = "self" if step % 2 == 0 or n_spk < 2 else "cross"
    c_spk = rng.integers(n_spk, size=batch_size)
    if kind == "self":
        s_spk = c_spk
    else:
        s_spk = (c_spk + 1 + rng.integers(n_spk - 1, size=batch_size)) % n_spk
    c_idx = np.array([rng.integers(data.count(k)) for k in c_spk])
    s_idx = np.empty(batch_size, dtype=np.int64)
    for b in range(batch_size):
        n = data.count(s_spk[b])
        if kind == "self" and n > 1:
            s_idx[b] = (c_idx[b] + 1 + rng.integers(n - 1)) % n
        else:
            s_idx[b] = rng.integers(n)
    content, style = data.gather(c_spk, c_idx), data.gather(s_spk, s_idx)
    if kind == "self" and (aug_shift > 0 or aug_scale > 0):
        _augment(data.stats, rng, content, style, aug_shift, aug_scale)
    return kind, content, style


def _augment(stats: NormalizationStats, rng: np.random.Generator, content: dict, style: dict,
             shift: float, scale: float) -> None:
    """Same random translation and amplitude scale for the style input and the
    reconstruction target of each batch item (normalized space, in place)."""
    B = content["pose"].shape[0]
    delta = rng.uniform(-shift, shift, size=(B, 2))
    gain = np.exp(rng.uniform(-scale, scale, size=B))
    for name in ("pose", "face"):
        std = np.asarray(stats.std[name], dtype=np.float64)
        d = torch.as_tensor(np.tile(delta, (1, std.size // 2)) / (2 * std), dtype=content[name].dtype)
        g = torch.as_tensor(gain, dtype=content[name].dtype)[:, None, None]
        for block in (content, style):
            x = block[name]
            m = x.mean(dim=1, keepdim=True)
            block[name] = m + g * (x - m) + d[:, None, :]


# --------------------------------------------------------------------------
# checkpoint


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    step: int
    lam: float
    config_hash: str
    speakers: list[str]
    stats: NormalizationStats
    model_state: dict[str, torch.Tensor]
    gen_opt_state: dict
    dis_opt_state: dict
    torch_rng_state: torch.Tensor

    def build(self) -> StyleTransferModel:
        model = StyleTransferModel(self.model_config).to(self.train_config.dtype)
        model.load_state_dict(self.model_state)
        model.eval()
        return model

    def save(self, path: str | Path) -> None:
        arrays: dict[str, np.ndarray] = {}
        for k, v in self.model_state.items():
            arrays[f"model/{k}"] = v.detach().cpu().numpy()
        opt_header = {}
        for tag, state in (("gen", self.gen_opt_state), ("dis", self.dis_opt_state)):
            steps = {}
            for idx, s in state["state"].items():
                steps[str(idx)] = float(s["step"])
                arrays[f"opt/{tag}/{idx}/exp_avg"] = s["exp_avg"].cpu().numpy()
                arrays[f"opt/{tag}/{idx}/exp_avg_sq"] = s["exp_avg_sq"].cpu().numpy()
            groups = [{k: (list(v) if isinstance(v, tuple) else v) for k, v in g.items()} for g in state["param_groups"]]
            opt_header[tag] = {"steps": steps, "param_groups": groups}
        for k, v in self.stats.to_arrays().items():
            arrays[k] = v
        header = {
            "format": "tsty-checkpoint",
            "model_config": self.model_config.to_dict(),
            "train_config": asdict(self.train_config),
            "step": self.step,
            "lambda": self.lam,
            "config_hash": self.config_hash,
            "speakers": self.speakers,
            "norm_epsilon": self.stats.epsilon,
            "optimizers": opt_header,
            "torch_rng_state": self.torch_rng_state.numpy().tolist(),
        }
        itemsize = 8 if self.train_config.precision == 64 else 4
        # stats are always float64 so normalization is identical after reload
        if itemsize == 4:
            header["norm_inline"] = {k: v.tolist() for k, v in self.stats.to_arrays().items()}
            for k in self.stats.to_arrays():
                arrays.pop(k)
        write_archive(path, header, arrays, itemsize=itemsize)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        header, arrays = read_archive(path)
        if header.get("format") != "tsty-checkpoint":
            raise ValueError(f"{path}: not a checkpoint")
        mcfg = ModelConfig.from_dict(header["model_config"])
        tcfg = TrainConfig.from_dict(header["train_config"])
        dtype = tcfg.dtype
        model_state = {k[len("model/"):]: torch.as_tensor(v, dtype=dtype) for k, v in arrays.items()
                       if k.startswith("model/")}
        opts = {}
        for tag in ("gen", "dis"):
            oh = header["optimizers"][tag]
            state = {}
            for idx, step in oh["steps"].items():
                state[int(idx)] = {
                    "step": torch.tensor(step, dtype=torch.float32),
                    "exp_avg": torch.as_tensor(arrays[f"opt/{tag}/{idx}/exp_avg"], dtype=dtype),
                    "exp_avg_sq": torch.as_tensor(arrays[f"opt/{tag}/{idx}/exp_avg_sq"], dtype=dtype),
                }
            groups = [dict(g, betas=tuple(g["betas"])) for g in oh["param_groups"]]
            opts[tag] = {"state": state, "param_groups": groups}
        norm = header.get("norm_inline")
        norm_arrays = {k: np.asarray(v) for k, v in norm.items()} if norm else arrays
        stats = NormalizationStats.from_arrays(norm_arrays, header["norm_epsilon"])
        return cls(mcfg, tcfg, int(header["step"]), float(header["lambda"]), header["config_hash"],
                   list(header["speakers"]), stats, model_state, opts["gen"], opts["dis"],
                   torch.tensor(header["torch_rng_state"], dtype=torch.uint8))


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict]
    model: StyleTransferModel


def _make_optimizers(model: StyleTransferModel, cfg: TrainConfig):
    betas = (cfg.beta1, cfg.beta2)
    gen = torch.optim.Adam(model.generator_parameters(), lr=cfg.clr_base, betas=betas)
    dis = torch.optim.Adam(model.discriminator.parameters(), lr=cfg.clr_base, betas=betas)
    return gen, dis


def _snapshot(model, gen_opt, dis_opt, step, model_cfg, train_cfg, speakers, stats) -> Checkpoint:
    return Checkpoint(
        model_cfg, train_cfg, step, lambda_at_step(step, train_cfg.schedule), config_hash(model_cfg, train_cfg),
        list(speakers), stats, {k: v.detach().clone() for k, v in model.state_dict().items()},
        _clone_opt(gen_opt.state_dict()), _clone_opt(dis_opt.state_dict()), torch.get_rng_state())


def _clone_opt(state: dict) -> dict:
    return {"state": {i: {k: v.clone() for k, v in s.items()} for i, s in state["state"].items()},
            "param_groups": [dict(g) for g in state["param_groups"]]}


def generator_objective(model: StyleTransferModel, h_content, h_style, target: GestureOutput | None, lam: float,
                        adv_style_target=None):
    """(L_total, L_rec, L_adv) for the generator-side update.

    The discriminator's regression target is held constant (``h_style`` detached)
    so adversarial pressure reaches the content path only; otherwise the style
    encoder could fool the discriminator by inflating its own output.
    ``target=None`` marks a cross-speaker batch with no reconstruction term.
    """
    style_target = h_style.detach() if adv_style_target is None else adv_style_target
    l_adv = adversarial_loss(style_target, model.discriminator(h_content))
    if target is not None:
        l_rec = reconstruction_loss(model.generate(h_content, h_style), target)
    else:
        l_rec = torch.zeros((), dtype=l_adv.dtype)
    return total_generator_loss(l_rec, l_adv, lam), l_rec, l_adv


def train_step(model: StyleTransferModel, gen_opt, dis_opt, batch, step: int, cfg: TrainConfig) -> dict:
    kind, content, style = batch
    lr = clr_learning_rate(step, cfg)
    lam = lambda_at_step(step, cfg.schedule)
    for opt in (gen_opt, dis_opt):
        for g in opt.param_groups:
            g["lr"] = lr

    h_content = model.encode_content(content["speech"], content["text"])
    h_style = model.encode_style(style["speech"], style["text"], style["pose"], style["face"], style["tags"])

    # (a) discriminator update; encoder outputs detached
    dis_opt.zero_grad(set_to_none=True)
    l_dis = discriminator_loss(h_style.detach(), model.discriminator(h_content.detach()))
    l_dis.backward()
    if cfg.grad_clip:
        torch.nn.utils.clip_grad_norm_(model.discriminator.parameters(), cfg.grad_clip)
    dis_opt.step()

    # (b) generator-side update against the updated, frozen discriminator
    gen_opt.zero_grad(set_to_none=True)
    for p in model.discriminator.parameters():
        p.requires_grad_(False)
    try:
        target = GestureOutput(content["pose"], content["face"]) if kind == "self" else None
        l_total, l_rec, l_adv = generator_objective(model, h_content, h_style, target, lam)
        record = {"step": step, "batch": kind, "lr": lr, "lambda": lam, "L_rec": l_rec.item(),
                  "L_adv": l_adv.item(), "L_dis": l_dis.item(), "L_total": l_total.item()}
        if not all(math.isfinite(record[k]) for k in ("L_rec", "L_adv", "L_dis", "L_total")):
            raise TrainingDivergedError(step, record)
        l_total.backward()
    finally:
        for p in model.discriminator.parameters():
            p.requires_grad_(True)
    if cfg.grad_clip:
        torch.nn.utils.clip_grad_norm_(model.generator_parameters(), cfg.grad_clip)
    gen_opt.step()
    return record


def train(corpus, model_cfg: ModelConfig, train_cfg: TrainConfig, *, resume: Checkpoint | None = None,
          log_path: str | Path | None = None, checkpoint_dir: str | Path | None = None,
          on_step: Callable[[dict], None] | None = None) -> TrainResult:
    """Train on a corpus root path or a ``(manifest, accessor)`` pair."""
    torch.use_deterministic_algorithms(True)
    if isinstance(corpus, (str, Path)):
        manifest, accessor = validate_and_load_corpus(corpus)
    else:
        manifest, accessor = corpus
    model_cfg.check_manifest(manifest)
    speakers = [s for s in manifest.speakers if s not in set(train_cfg.held_out_speakers)]
    if not speakers:
        raise ValueError("no training speakers left after held-out exclusion")

    if resume is not None:
        if resume.config_hash != config_hash(model_cfg, train_cfg):
            raise ValueError("checkpoint was produced with a different configuration")
        stats = resume.stats
        model = resume.build()
        gen_opt, dis_opt = _make_optimizers(model, train_cfg)
        gen_opt.load_state_dict(resume.gen_opt_state)
        dis_opt.load_state_dict(resume.dis_opt_state)
        torch.set_rng_state(resume.torch_rng_state)
        start = resume.step
    else:
        stats = compute_normalization_stats(accessor.bundles("train", speakers))
        model = build_model(model_cfg, train_cfg.seed, train_cfg.dtype)
        gen_opt, dis_opt = _make_optimizers(model, train_cfg)
        start = 0
    model.train()
    data = TrainingData(manifest, accessor, stats, speakers, train_cfg.dtype)

    records: list[dict] = []
    last_rec = float("nan")
    log_file = open(log_path, "a" if resume is not None else "w", encoding="utf-8") if log_path else None
    try:
        for step in range(start, train_cfg.total_iterations):
            batch = sample_batch(data, step, train_cfg.seed, train_cfg.batch_size, train_cfg.aug_shift,
                                 train_cfg.aug_scale)
            rec = train_step(model, gen_opt, dis_opt, batch, step, train_cfg)
            records.append(rec)
            if log_file:
                log_file.write(json.dumps(rec) + "\n")
            if on_step:
                on_step(rec)
            done = step + 1
            if checkpoint_dir and train_cfg.checkpoint_every and done % train_cfg.checkpoint_every == 0:
                Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
                _snapshot(model, gen_opt, dis_opt, done, model_cfg, train_cfg, speakers, stats).save(
                    Path(checkpoint_dir) / f"step{done:06d}.ckpt")
            if rec["batch"] == "self":
                last_rec = rec["L_rec"]
            if done % 100 == 0:
                log.info("step %d rec %.4f adv %.4f dis %.4f", done, last_rec, rec["L_adv"], rec["L_dis"])
    finally:
        if log_file:
            log_file.close()
    final = _snapshot(model, gen_opt, dis_opt, max(start, train_cfg.total_iterations), model_cfg, train_cfg,
                      speakers, stats)
    model.eval()
    return TrainResult(final, records, model)


def initial_checkpoint(corpus, model_cfg: ModelConfig, train_cfg: TrainConfig) -> Checkpoint:
    """Step-0 state (freshly initialized model) for the same config."""
    return train(corpus, model_cfg, TrainConfig(**{**asdict(train_cfg), "total_iterations": 0})).checkpoint


@torch.no_grad()
def evaluation_reconstruction(model: StyleTransferModel, stats: NormalizationStats, accessor: SegmentAccessor,
                              speakers: list[str], split: str = "val") -> float:
    """Mean self-reconstruction loss (normalized space), style taken from the next segment of the same speaker."""
    dtype = next(model.parameters()).dtype
    losses = []
    for spk in speakers:
        segs = accessor.split(spk, split)
        if len(segs) < 2:
            continue
        x = stack_streams([s.bundle for s in segs], stats, dtype)
        roll = {k: torch.roll(v, 1, dims=0) for k, v in x.items()}
        hc = model.encode_content(x["speech"], x["text"])
        hs = model.encode_style(roll["speech"], roll["text"], roll["pose"], roll["face"], roll["tags"])
        out = model.generate(hc, hs)
        losses.append(float(reconstruction_loss(out, GestureOutput(x["pose"], x["face"]))))
    return float(np.mean(losses))


@torch.no_grad()
def self_reconstruction(model: StyleTransferModel, stats: NormalizationStats,
                        bundle) -> tuple[np.ndarray, np.ndarray]:
    """Decode one segment with its own style; raw-coordinate (pose, face)."""
    dtype = next(model.parameters()).dtype
    x = stack_streams([bundle], stats, dtype)
    out = model.generate(model.encode_content(x["speech"], x["text"]),
                         model.encode_style(x["speech"], x["text"], x["pose"], x["face"], x["tags"]))
    return (stats.apply("pose", out.pose[0].double().numpy(), "inverse"),
            stats.apply("face", out.face[0].double().numpy(), "inverse"))
