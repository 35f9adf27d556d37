"""gesturestyle command line: synth-data, validate, train, transfer, evaluate, export-embeddings, render.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 training diverged.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .container import ContainerError
from .corpus import CorpusError, FeatureBundle, read_bundle, validate_and_load_corpus, write_bundle
from .evaluation import EvalConfig, evaluate_pair, export_embeddings, minkowski_distance, project_2d
from .model import ModelConfig, transfer_style
from .render import write_frames
from .synthcorpus import NotSyntheticError, SynthConfig, SynthSidecar, generate_synthetic_corpus, oracle_style_transfer
from .trainer import Checkpoint, TrainConfig, TrainingDivergedError, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("gesturestyle")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_json(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {path}: {e}") from e


def _read_segment(path: Path) -> FeatureBundle:
    try:
        return read_bundle(path)
    except (OSError, ContainerError, CorpusError) as e:
        raise DataError(f"cannot read segment {path}: {e}") from e


def _load_checkpoint(path: Path, precision: int | None) -> Checkpoint:
    try:
        ck = Checkpoint.load(path)
    except (OSError, ContainerError, ValueError, KeyError) as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    if precision is not None and precision != ck.train_config.precision:
        raise UsageError(f"checkpoint was trained at {ck.train_config.precision}-bit; --precision {precision} "
                         "does not match")
    return ck


def _write_json(data: dict, out: Path | None) -> None:
    text = json.dumps(data, indent=2, sort_keys=True)
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)


# --------------------------------------------------------------------------
# subcommands


def cmd_synth_data(args) -> int:
    conf = _load_json(args.config)
    if "split_fractions" in conf:
        conf["split_fractions"] = tuple(conf["split_fractions"])
    for flag, key in (("speakers", "n_speakers"), ("segments", "segments_per_speaker"), ("mel_bins", "mel_bins"),
                      ("text_dim", "text_dim"), ("seed", "seed")):
        if getattr(args, flag) is not None:
            conf[key] = getattr(args, flag)
    try:
        cfg = SynthConfig(**conf)
    except TypeError as e:
        raise UsageError(str(e)) from e
    manifest = generate_synthetic_corpus(cfg, args.out)
    print(json.dumps({"root": str(args.out), "speakers": manifest.speakers,
                      "segments": sum(len(v) for v in manifest.splits.values())}))
    return EXIT_OK


def cmd_validate(args) -> int:
    manifest, accessor = validate_and_load_corpus(args.corpus)
    counts = {spk: {split: len(manifest.segment_ids(spk, split)) for split in ("train", "val", "test")}
              for spk in manifest.speakers}
    print(json.dumps({"ok": True, "segments": len(accessor), "dims": manifest.stream_dims(), "counts": counts},
                     indent=2))
    return EXIT_OK


def cmd_train(args) -> int:
    conf = _load_json(args.config)
    manifest, accessor = validate_and_load_corpus(args.corpus)
    tconf = dict(conf.get("train", {}))
    for flag, key in (("steps", "total_iterations"), ("seed", "seed"), ("precision", "precision"),
                      ("checkpoint_every", "checkpoint_every"), ("held_out", "held_out_speakers")):
        if getattr(args, flag) is not None:
            tconf[key] = getattr(args, flag)
    try:
        tcfg = TrainConfig(**tconf)
        mconf = dict(conf.get("model", {}))
        d_model = int(args.d_model or mconf.pop("d_model", 16))
        mcfg = ModelConfig.for_manifest(manifest, d_model=d_model, **mconf)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from e
    resume = _load_checkpoint(args.resume, None) if args.resume else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = train((manifest, accessor), mcfg, tcfg, resume=resume, log_path=out / "train_log.jsonl",
                       checkpoint_dir=out / "checkpoints")
    except ValueError as e:
        raise UsageError(str(e)) from e
    result.checkpoint.save(out / "model.ckpt")
    last = result.log[-1] if result.log else {}
    print(json.dumps({"checkpoint": str(out / "model.ckpt"), "step": result.checkpoint.step, "last": last}))
    return EXIT_OK


def cmd_transfer(args) -> int:
    ck = _load_checkpoint(args.checkpoint, args.precision)
    model = ck.build()
    source = _read_segment(args.source)
    targets = [_read_segment(p) for p in args.target]
    pose, face = transfer_style(model, ck.stats, source, targets)
    out = FeatureBundle(source.speech, source.text, pose.astype(np.float32), face.astype(np.float32), source.tags)
    write_bundle(args.out, out)
    report = {
        "output": str(args.out),
        "source": str(args.source),
        "targets": [str(p) for p in args.target],
        "pose_shape": list(pose.shape),
        "face_shape": list(face.shape),
        "dist_to_source": minkowski_distance(np.concatenate([pose, face], -1),
                                             np.concatenate([source.pose, source.face], -1)),
    }
    _write_json(report, Path(args.out).with_suffix(".json"))
    return EXIT_OK


def _parse_pair(text: str) -> tuple[str, str]:
    parts = text.split(":")
    if len(parts) != 2 or not all(parts):
        raise UsageError(f"--pair expects SOURCE:TARGET, got {text!r}")
    return parts[0], parts[1]


def cmd_evaluate(args) -> int:
    ck = _load_checkpoint(args.checkpoint, args.precision)
    manifest, accessor = validate_and_load_corpus(args.corpus)
    ck.model_config.check_manifest(manifest)
    src, tgt = _parse_pair(args.pair)
    for spk in (src, tgt):
        if spk not in manifest.speakers:
            raise DataError(f"unknown speaker {spk!r}; corpus has {manifest.speakers}")
    ecfg = EvalConfig.from_dict(_load_json(args.config).get("eval"))
    if args.seed is not None:
        ecfg.classifier.seed = args.seed
    oracle = None
    try:
        sidecar = SynthSidecar.load(args.corpus)
        oracle = lambda seg, target: oracle_style_transfer(seg, sidecar.factors[target], sidecar)  # noqa: E731
    except NotSyntheticError:
        pass
    torch.manual_seed(ecfg.classifier.seed)
    report = evaluate_pair(ck.build(), ck.stats, accessor, src, tgt, ecfg, oracle)
    _write_json(report.to_dict(), args.out)
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    ck = _load_checkpoint(args.checkpoint, args.precision)
    manifest, accessor = validate_and_load_corpus(args.corpus)
    ck.model_config.check_manifest(manifest)
    speakers = args.speakers or manifest.speakers
    segs = [s for spk in speakers for s in accessor.split(spk, args.split)]
    table = export_embeddings(ck.build(), ck.stats, segs)
    table.write_tsv(args.out)
    summary = {"rows": len(table), "style_dim": int(table.style.shape[1]), "content_dim": int(table.content.shape[1])}
    if args.project:
        seed = 0 if args.seed is None else args.seed
        proj_path = Path(args.out).with_suffix(f".{args.project}.tsv")
        lines = ["speaker_id\tsegment_id\tstyle_x\tstyle_y\tcontent_x\tcontent_y"]
        ps, pc = project_2d(table.style, args.project, seed), project_2d(table.content, args.project, seed)
        for k in range(len(table)):
            vals = "\t".join(repr(float(v)) for v in (*ps[k], *pc[k]))
            lines.append(f"{table.speakers[k]}\t{table.segment_ids[k]}\t{vals}")
        proj_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        summary["projection"] = str(proj_path)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_render(args) -> int:
    bundle = _read_segment(args.input)
    paths = write_frames(bundle.pose, bundle.face, args.out, size=args.size, every=args.every)
    print(json.dumps({"frames": len(paths), "out": str(args.out)}))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file (sections depend on the subcommand)")
    common.add_argument("--seed", type=int, help="random seed (non-negative integer)")
    common.add_argument("--precision", type=int, choices=(32, 64), help="floating-point precision in bits")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="gesturestyle", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth-data", parents=[common], help="write a synthetic corpus with known style factors")
    s.add_argument("--out", type=Path, required=True, help="corpus root to create")
    s.add_argument("--speakers", type=int, help="number of speakers")
    s.add_argument("--segments", type=int, help="segments per speaker")
    s.add_argument("--mel-bins", dest="mel_bins", type=int, help="speech feature width")
    s.add_argument("--text-dim", dest="text_dim", type=int, help="text feature width")
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("validate", parents=[common], help="check a corpus and print a summary")
    s.add_argument("corpus", type=Path, help="corpus root")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("train", parents=[common], help="train a model; config sections 'model' and 'train'")
    s.add_argument("corpus", type=Path, help="corpus root")
    s.add_argument("--out", type=Path, required=True, help="output directory for model.ckpt and train_log.jsonl")
    s.add_argument("--steps", type=int, help="total training iterations")
    s.add_argument("--d-model", dest="d_model", type=int, help="model width")
    s.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, help="save every N steps")
    s.add_argument("--held-out", dest="held_out", nargs="+", help="speakers excluded from training")
    s.add_argument("--resume", type=Path, help="checkpoint to resume from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("transfer", parents=[common], help="render a source segment in the style of target segments")
    s.add_argument("--checkpoint", type=Path, required=True, help="trained checkpoint")
    s.add_argument("--source", type=Path, required=True, help="source segment file (content)")
    s.add_argument("--target", type=Path, nargs="+", required=True, help="target segment files (style, pooled)")
    s.add_argument("--out", type=Path, required=True, help="output segment file; a .json report is written beside it")
    s.set_defaults(func=cmd_transfer)

    s = sub.add_parser("evaluate", parents=[common], help="score transfers for one speaker pair")
    s.add_argument("--checkpoint", type=Path, required=True, help="trained checkpoint")
    s.add_argument("--corpus", type=Path, required=True, help="corpus root")
    s.add_argument("--pair", required=True, help="SOURCE:TARGET speaker ids")
    s.add_argument("--out", type=Path, help="also write the report JSON here")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("export-embeddings", parents=[common], help="write style and pooled content vectors as TSV")
    s.add_argument("--checkpoint", type=Path, required=True, help="trained checkpoint")
    s.add_argument("--corpus", type=Path, required=True, help="corpus root")
    s.add_argument("--out", type=Path, required=True, help="output TSV")
    s.add_argument("--split", default="test", choices=("train", "val", "test"), help="which split to embed")
    s.add_argument("--speakers", nargs="+", help="restrict to these speakers")
    s.add_argument("--project", choices=("tsne", "pca"), help="also write a 2-D projection TSV")
    s.set_defaults(func=cmd_export_embeddings)

    s = sub.add_parser("render", parents=[common], help="write stick-figure PNG frames for a segment file")
    s.add_argument("--input", type=Path, required=True, help="segment file")
    s.add_argument("--out", type=Path, required=True, help="output directory")
    s.add_argument("--size", type=int, default=256, help="image side in pixels")
    s.add_argument("--every", type=int, default=1, help="keep every Nth frame")
    s.set_defaults(func=cmd_render)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    if args.seed is not None and args.seed < 0:
        parser.error("--seed must be non-negative")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"gesturestyle: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CorpusError, ContainerError) as e:
        print(f"gesturestyle: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as e:
        print(f"gesturestyle: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
