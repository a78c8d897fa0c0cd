"""Command-line surface: synth, train, accumulate, infer, eval, ensemble,
export-kg, bench.

Every command writes exactly one ``run_manifest.json`` next to its outputs
(command, flags, paths, seed, wall-clock). All primary outputs are
byte-reproducible for identical flags and inputs; only the run manifest
and benchmark timings vary between runs. Relative paths resolve against
``$TRIPLETKB_DATA_ROOT`` when it is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .errors import TripletKbError, UsageError
from .features import (
    Split,
    SynthSpec,
    build_vocab,
    canonical_json,
    generate_synthetic,
    load_dataset,
    write_dataset,
)
from .inference import (
    DEFAULT_ENSEMBLE_THRESHOLD,
    bench_ranking,
    ensemble_from_candidates,
    evaluate,
    infer,
)
from .knowledge import accumulate, export_graph, load_kb, seal_and_save
from .losses import LossToggles
from .trainer import (
    Stage,
    default_config,
    desk_config,
    desk_dims,
    extend_for_stage,
    extension_rng,
    load_checkpoint,
    save_checkpoint,
    train_stage,
)

ENV_DATA_ROOT = "TRIPLETKB_DATA_ROOT"


def _resolve(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(ENV_DATA_ROOT)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _write_run_manifest(out_dir: Path, command: str, flags: dict,
                        inputs: dict, outputs: list[Path], seed: int | None,
                        started: float) -> None:
    flag_values = {k: v for k, v in flags.items()
                   if isinstance(v, (str, int, float, bool, type(None)))}
    manifest = {
        "artifact_version": __version__,
        "command": command,
        "flags": flag_values,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "wall_clock_s": time.time() - started,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _jsonl_write(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(canonical_json(r) + "\n" for r in records),
                    encoding="utf-8")


def _jsonl_read(path: Path) -> list[dict]:
    return [json.loads(line) for line in
            path.read_text(encoding="utf-8").splitlines() if line.strip()]


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------


def cmd_synth(args) -> int:
    started = time.time()
    out_dir = _resolve(args.out)
    spec = SynthSpec(
        classes=args.classes, per_class=args.per_class,
        noise_scale=args.noise, seed=args.seed,
        num_objects=args.objects, feature_dim=args.feature_dim,
        train_fraction=args.train_fraction,
        class_prefix=args.class_prefix,
        first_class_index=args.first_class,
    )
    try:
        spec.validate()
    except TripletKbError as exc:
        raise UsageError(str(exc)) from exc
    dataset = generate_synthetic(spec)
    written = write_dataset(dataset, out_dir / "features.mkf")
    n_train = len(dataset.split(Split.TRAIN))
    print(f"wrote {len(dataset.samples)} samples "
          f"({n_train} train / {len(dataset.samples) - n_train} test), "
          f"{len(dataset.vocab)} answer classes -> {written[0]}")
    _write_run_manifest(out_dir, "synth", vars(args), {}, written,
                        args.seed, started)
    return 0


def _toggles_from_args(args) -> LossToggles:
    return LossToggles(transe=not args.no_transe_loss,
                       consistency=not args.no_consistency_loss,
                       semantic=not args.no_semantic_loss)


def cmd_train(args) -> int:
    started = time.time()
    stage = Stage(args.stage)
    if stage == Stage.FINETUNE and not args.checkpoint and not args.from_scratch:
        raise UsageError("fine-tuning needs --checkpoint (or --from-scratch "
                         "to start a fresh model)")
    features_path = _resolve(args.features)
    out_dir = _resolve(args.out)
    data = load_dataset(features_path)

    make = default_config if args.profile == "paper" else desk_config
    overrides = {"seed": args.seed, "toggles": _toggles_from_args(args)}
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"),
                      ("learning_rate", "learning_rate"),
                      ("temperature", "temperature"), ("margin", "margin"),
                      ("weight_decay", "weight_decay"),
                      ("grad_clip", "grad_clip")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    config = make(stage, **overrides)

    inputs = {"features": features_path}
    if args.checkpoint:
        ckpt_path = _resolve(args.checkpoint)
        inputs["checkpoint"] = ckpt_path
        ckpt = load_checkpoint(ckpt_path)
        vocab = build_vocab([data], existing=ckpt.vocab)
        ckpt = extend_for_stage(ckpt, vocab, extension_rng(config))
        trained, log = train_stage(data, ckpt, config)
    else:
        dims = None if args.profile == "paper" \
            else desk_dims(data.meta.feature_dim)
        trained, log = train_stage(data, None, config, dims=dims)

    written = save_checkpoint(trained, out_dir / "checkpoint.mkc")
    log_path = out_dir / "train_log.jsonl"
    _jsonl_write(log_path, [
        {"consistency": b.consistency, "epoch": i, "semantic": b.semantic,
         "total": b.total, "transe": b.transe}
        for i, b in enumerate(log)])
    written.append(log_path)
    print(f"trained {config.stage.value} for {config.epochs} epochs "
          f"(final loss {log[-1].total:.6f}) -> {written[0]}")
    _write_run_manifest(out_dir, "train", vars(args), inputs, written,
                        args.seed, started)
    return 0


def cmd_accumulate(args) -> int:
    started = time.time()
    features_path = _resolve(args.features)
    ckpt_path = _resolve(args.checkpoint)
    out_dir = _resolve(args.out)
    data = load_dataset(features_path)
    ckpt = load_checkpoint(ckpt_path)
    existing = load_kb(_resolve(args.kb)) if args.kb else None
    kb = accumulate(data, ckpt, existing=existing)
    written = seal_and_save(kb, out_dir)
    print(f"accumulated {len(kb)} triplets over {len(kb.vocab)} answers "
          f"-> {written[0]}")
    inputs = {"features": features_path, "checkpoint": ckpt_path}
    if args.kb:
        inputs["kb"] = _resolve(args.kb)
    _write_run_manifest(out_dir, "accumulate", vars(args), inputs, written,
                        None, started)
    return 0


def _rank_records(data, ckpt, k: int, split: Split) -> list[dict]:
    records = []
    for sample in data.split(split):
        result = infer(sample, ckpt, k)
        records.append({
            "attention": [round(float(a), 9) for a in result.attention],
            "candidates": [[i, ckpt.vocab.answer_of(i), d]
                           for i, d in result.entries],
            "sample_id": result.sample_id,
            "selected_object": result.selected_object,
        })
    return records


def cmd_infer(args) -> int:
    started = time.time()
    features_path = _resolve(args.features)
    ckpt_path = _resolve(args.checkpoint)
    out_dir = _resolve(args.out)
    data = load_dataset(features_path)
    ckpt = load_checkpoint(ckpt_path)
    records = _rank_records(data, ckpt, args.top_k, Split(args.split))
    dump_path = out_dir / "predictions.jsonl"
    _jsonl_write(dump_path, records)
    print(f"ranked {len(records)} {args.split} samples "
          f"(top-{args.top_k}) -> {dump_path}")
    _write_run_manifest(out_dir, "infer", vars(args),
                        {"features": features_path, "checkpoint": ckpt_path},
                        [dump_path], None, started)
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    features_path = _resolve(args.features)
    ckpt_path = _resolve(args.checkpoint)
    out_dir = _resolve(args.out)
    data = load_dataset(features_path)
    ckpt = load_checkpoint(ckpt_path)
    report = evaluate(data, ckpt, split=Split(args.split))

    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    report_path.write_text(canonical_json(report.to_dict()) + "\n",
                           encoding="utf-8")
    hist_path = out_dir / "per_answer_accuracy.tsv"
    hist_lines = ["answer\tn\taccuracy"]
    hist_lines += [f"{answer}\t{n}\t{acc:.6f}"
                   for answer, n, acc in report.per_answer]
    hist_path.write_text("\n".join(hist_lines) + "\n", encoding="utf-8")
    pred_path = out_dir / "predictions.jsonl"
    _jsonl_write(pred_path, [
        {"majority": p.majority, "predicted": p.predicted,
         "sample_id": p.sample_id, "score": p.score,
         "top1_match": p.top1_match}
        for p in report.predictions])
    print(f"accuracy {report.overall_accuracy:.4f}  "
          f"mean-per-answer {report.m_accuracy:.4f}  "
          f"top-1 {report.top1_accuracy:.4f} -> {report_path}")
    _write_run_manifest(out_dir, "eval", vars(args),
                        {"features": features_path, "checkpoint": ckpt_path},
                        [report_path, hist_path, pred_path], None, started)
    return 0


def cmd_ensemble(args) -> int:
    started = time.time()
    pred_path = _resolve(args.predictions)
    partner_path = _resolve(args.partner)
    out_dir = _resolve(args.out)
    primary = _jsonl_read(pred_path)
    partner = {r["sample_id"]: r["answer"] for r in _jsonl_read(partner_path)}

    decisions = []
    for rec in primary:
        sample_id = rec["sample_id"]
        if sample_id not in partner:
            raise UsageError(f"partner file has no prediction for {sample_id}")
        candidates = [(a, float(d)) for _, a, d in rec["candidates"]]
        decision = ensemble_from_candidates(candidates, partner[sample_id],
                                            args.m)
        decisions.append({
            "chosen": decision.chosen,
            "gap": decision.gap if decision.gap != float("inf") else "inf",
            "sample_id": sample_id,
            "source": decision.source.value,
            "threshold": decision.threshold,
        })
    out_path = out_dir / "ensemble.jsonl"
    _jsonl_write(out_path, decisions)
    taken = sum(1 for d in decisions if d["source"] == "primary_model")
    print(f"ensemble kept {taken}/{len(decisions)} primary answers "
          f"(threshold {args.m}) -> {out_path}")
    _write_run_manifest(out_dir, "ensemble", vars(args),
                        {"predictions": pred_path, "partner": partner_path},
                        [out_path], None, started)
    return 0


def cmd_export_kg(args) -> int:
    started = time.time()
    kb_dir = _resolve(args.kb)
    out_dir = _resolve(args.out)
    kb = load_kb(kb_dir)
    graph = export_graph(kb)
    out_path = graph.write(out_dir / "knowledge_graph.json")
    print(f"exported {len(graph.nodes)} nodes / {len(graph.edges)} edges "
          f"-> {out_path}")
    _write_run_manifest(out_dir, "export-kg", vars(args), {"kb": kb_dir},
                        [out_path], None, started)
    return 0


def cmd_bench(args) -> int:
    started = time.time()
    out_dir = _resolve(args.out)
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s]
    except ValueError as exc:
        raise UsageError(f"bad --sizes value {args.sizes!r}") from exc
    if not sizes:
        raise UsageError("--sizes must list at least one table size")
    result = bench_ranking(sizes, args.queries, out_dir / "work",
                           k=args.top_k, seed=args.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "bench.tsv"
    lines = ["size\tinference_s\tranking_s\tranking_share"]
    for row in result.rows:
        lines.append(f"{row.size}\t{row.inference_s:.6f}\t"
                     f"{row.ranking_s:.6f}\t{row.ratio:.6f}")
    table_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    json_path = out_dir / "bench.json"
    json_path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True)
                         + "\n", encoding="utf-8")
    print("\n".join(lines))
    print(f"prefix_consistent={result.prefix_consistent} -> {table_path}")
    _write_run_manifest(out_dir, "bench", vars(args), {},
                        [table_path, json_path], args.seed, started)
    return 0


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripletkb",
        description="Multimodal knowledge-triplet engine: synthesize data, "
                    "train, accumulate a knowledge base, rank answers.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--objects", type=int, default=8)
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--class-prefix", default="class")
    p.add_argument("--first-class", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("--stage", choices=[s.value for s in Stage], required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", help="checkpoint to continue from")
    p.add_argument("--from-scratch", action="store_true",
                   help="allow fine-tuning without a checkpoint")
    p.add_argument("--profile", choices=["paper", "desk"], default="desk")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--no-transe-loss", action="store_true")
    p.add_argument("--no-consistency-loss", action="store_true")
    p.add_argument("--no-semantic-loss", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("accumulate", help="build/extend a knowledge base")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kb", help="existing knowledge base directory to extend")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_accumulate)

    p = sub.add_parser("infer", help="rank tail candidates per sample")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--split", choices=[s.value for s in Split], default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="score predictions on one split")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=[s.value for s in Split], default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ensemble", help="combine with a partner model's answers")
    p.add_argument("--predictions", required=True,
                   help="predictions.jsonl from the infer command")
    p.add_argument("--partner", required=True,
                   help="JSONL of {sample_id, answer} partner predictions")
    p.add_argument("--m", type=float, default=DEFAULT_ENSEMBLE_THRESHOLD,
                   help="top-2 distance-gap threshold")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ensemble)

    p = sub.add_parser("export-kg", help="export the merged knowledge graph")
    p.add_argument("--kb", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_kg)

    p = sub.add_parser("bench", help="ranking-time benchmark over table sizes")
    p.add_argument("--sizes", default="1000,10000,100000",
                   help="comma-separated tail-table sizes")
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error:usage: {exc}", file=sys.stderr)
        return 2
    except TripletKbError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
