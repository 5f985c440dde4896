"""Command-line surface: synth | train | eval | predict | sweep-k | ablate.

Exit codes: 0 on success, 2 on usage errors, 1 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import report as rpt
from . import train as tr
from .config import Config, config_from_dict, load_config
from .model import load_model
from .synthdoc import generate_dataset, load_dataset, save_dataset, split_dataset


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _build_config(args) -> Config:
    """File values first, then --set overrides, then dedicated path flags."""
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = Config()
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key] = _parse_value(value)
    if overrides:
        base = {**cfg.to_dict(), **overrides}
        cfg = config_from_dict(base)
    if getattr(args, "data", None):
        cfg.data_dir = args.data
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def _load_split(data_dir: str, split: str) -> list:
    docs, manifest = load_dataset(data_dir)
    splits = split_dataset(docs, manifest)
    if split not in splits:
        raise ValueError(f"unknown split {split!r}; expected one of {sorted(splits)}")
    return splits[split]


def run_synth(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    docs, stats = generate_dataset(manifest)
    save_dataset(docs, manifest, args.out, stats)
    total = sum(manifest["counts"].values())
    print(f"wrote {total} documents to {args.out}")
    if stats["injected"]:
        print(f"ambiguity injected into {stats['injected']} of {stats['eligible']} eligible documents")
    return 0


def run_train(args) -> int:
    cfg = _build_config(args)
    model, training = tr.train(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.grie")

    splits, _, _, _ = tr.load_task(cfg)
    scores = tr.evaluate_model(model, splits["val"])
    training["val_scores"] = rpt.strip_predictions(scores)
    rpt.save_metrics_json(training, out / "metrics.json")
    rpt.plot_training_curves(training, out / "loss_curve.png")

    print(f"trained {training['epochs_run']} epochs; best val F1 {training['best_val_f1']:.4f}"
          f" at epoch {training['best_epoch']}")
    print(rpt.format_score_table(scores))
    print(f"artifacts in {out}")
    return 0


def run_eval(args) -> int:
    model = load_model(args.checkpoint)
    docs = _load_split(args.data, args.split)
    scores = tr.evaluate_model(model, docs, threads=args.threads)
    print(rpt.format_score_table(scores))
    if args.json:
        rpt.save_metrics_json(rpt.strip_predictions(scores), args.json)
    return 0


def run_predict(args) -> int:
    model = load_model(args.checkpoint)
    docs = _load_split(args.data, args.split)
    records = []
    graphs = []
    for doc in docs:
        decoded = model.decode(doc)
        segments = []
        for i, text in enumerate(doc.segments):
            segments.append({
                "text": text,
                "box": np.asarray(doc.boxes[i]).tolist(),
                "tags": decoded["char_tags"][i],
                "label": decoded["segment_labels"][i],
            })
        records.append({
            "id": doc.doc_id,
            "segments": segments,
            "entities": [{"class": c, "text": t} for c, t in decoded["entities"].items()],
        })
        if args.dump_graph and decoded["adjacency"] is not None:
            a = decoded["adjacency"]
            graphs.append({
                "id": doc.doc_id,
                "n": int(a.shape[0]),
                "weights": [float(v) for v in a.reshape(-1)],
            })
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(records, indent=2) + "\n")
    print(f"wrote predictions for {len(records)} documents to {out}")
    if args.dump_graph:
        Path(args.dump_graph).write_text(json.dumps(graphs, indent=2) + "\n")
        print(f"wrote {len(graphs)} revised adjacency matrices to {args.dump_graph}")
    return 0


def _parse_k_list(text: str, docs: list) -> list:
    """Comma-separated K values; the token N means a dense graph."""
    values = []
    for token in text.split(","):
        token = token.strip()
        if token.upper() == "N":
            values.append(max(len(d.segments) for d in docs))
        else:
            values.append(int(token))
    return values


def run_sweep_k(args) -> int:
    cfg = _build_config(args)
    docs, manifest = load_dataset(cfg.data_dir)
    splits = split_dataset(docs, manifest)
    k_values = _parse_k_list(args.k, splits["train"] + splits["val"])
    rows = tr.sweep_k(cfg, k_values)
    out = Path(cfg.out_dir)
    rpt.save_k_sweep(rows, out / "k_sweep.csv", out / "k_sweep.png")
    print(f"{'k':>4} {'val_f1':>8}")
    for row in rows:
        print(f"{row['k']:>4d} {row['val_f1']:>8.4f}")
    print(f"artifacts in {out}")
    return 0


def run_ablate(args) -> int:
    cfg = _build_config(args)
    rows = tr.ablate(cfg)
    out = Path(cfg.out_dir)
    rpt.save_ablation(rows, out / "ablation.csv", out / "ablation.png")
    print(rpt.format_ablation_table(rows))
    print(f"artifacts in {out}")
    return 0


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file with flat keys")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--data", help="dataset directory (overrides config data_dir)")
    p.add_argument("--out", help="output directory (overrides config out_dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grie",
        description="Key information extraction on synthetic documents with a graph-revised character model.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a dataset from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=run_synth)

    p = sub.add_parser("train", help="train a model and write checkpoint + report")
    _add_config_flags(p)
    p.set_defaults(func=run_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--json", help="also write the metrics report to this path")
    p.set_defaults(func=run_eval)

    p = sub.add_parser("predict", help="emit per-document prediction JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True)
    p.add_argument("--dump-graph", help="also write revised adjacency matrices to this path")
    p.set_defaults(func=run_predict)

    p = sub.add_parser("sweep-k", help="train once per K and tabulate validation F1")
    _add_config_flags(p)
    p.add_argument("--k", required=True, metavar="LIST",
                   help="comma-separated K values; N selects the dense-graph limit")
    p.set_defaults(func=run_sweep_k)

    p = sub.add_parser("ablate", help="run the five-variant branch ablation study")
    _add_config_flags(p)
    p.set_defaults(func=run_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
