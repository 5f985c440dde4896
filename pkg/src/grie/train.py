"""Training loop, evaluation, K sweep, and the ablation study."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from . import crf
from . import tensor as T
from .config import Config
from .crf import entity_scores, gold_entities
from .embedding import Vocab
from .model import Model
from .rand import substream
from .synthdoc import dataset_hash, load_dataset, split_dataset


def load_task(config: Config):
    """Dataset splits plus the vocab and tagset the manifest prescribes."""
    docs, manifest = load_dataset(config.data_dir)
    splits = split_dataset(docs, manifest)
    vocab = Vocab(manifest["vocabulary"])
    tagset = crf.TagSet(manifest["tag_classes"])
    return splits, manifest, vocab, tagset


def evaluate_model(model: Model, docs, threads: int = 1) -> dict:
    """Entity-level scores over a document list; inference is pure, so the
    optional thread fan-out cannot change the merged result."""
    if not docs:
        return {
            "n_docs": 0,
            **entity_scores([], classes=model.tagset.classes),
            "predictions": [],
        }
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            decoded = list(pool.map(model.decode, docs))
    else:
        decoded = [model.decode(doc) for doc in docs]
    pairs = [(d["entities"], gold_entities(doc)) for d, doc in zip(decoded, docs)]
    scores = entity_scores(pairs, classes=model.tagset.classes)
    return {"n_docs": len(docs), **scores, "predictions": decoded}


def class_subset_f1(scores: dict, classes) -> float:
    """Micro F1 restricted to a class subset, from per-class counts."""
    rows = [scores["per_class"].get(c, {"tp": 0, "pred": 0, "gold": 0}) for c in classes]
    tp = sum(r["tp"] for r in rows)
    return crf.f1_counts(tp, sum(r["pred"] for r in rows), sum(r["gold"] for r in rows))[2]


def train(config: Config, progress=None) -> tuple:
    """Train on the configured dataset; returns (model, report).

    The model keeps the weights of the best-validation-F1 epoch. The report
    carries everything needed to reproduce the run: config echo, seed,
    dataset hash, per-epoch losses, F1 curves, and timings.
    """
    splits, manifest, vocab, tagset = load_task(config)
    train_docs, val_docs = splits["train"], splits["val"]
    model = Model(config, vocab, tagset)
    opt = T.Adam(model.trainable(), lr=config.lr)

    best = {
        "val_f1": -1.0,
        "epoch": 0,
        "arrays": {n: p.data.copy() for n, p in model.params.items()},
    }
    loss_curve, val_curve, timings = [], [], []
    train_f1 = 0.0
    stopped_early = False

    for epoch in range(1, config.epochs + 1):
        tick = time.perf_counter()
        opt.lr = config.epoch_lr(epoch)
        order = substream(config.seed, "shuffle", epoch).permutation(len(train_docs))
        total = 0.0
        for j in order:
            doc = train_docs[int(j)]
            rng = substream(config.seed, "dropout", epoch, doc.doc_id) if config.dropout > 0 else None
            loss = model.loss(doc, rng=rng)
            T.backward(loss)
            opt.step()
            total += loss.item()
        loss_curve.append(total / max(len(train_docs), 1))

        val_f1 = evaluate_model(model, val_docs)["f1"] if val_docs else 0.0
        val_curve.append(val_f1)
        if val_f1 > best["val_f1"]:
            best = {
                "val_f1": val_f1,
                "epoch": epoch,
                "arrays": {n: p.data.copy() for n, p in model.params.items()},
            }
        timings.append(time.perf_counter() - tick)
        if progress:
            progress(epoch, loss_curve[-1], val_f1)

        if config.early_stop_train_f1 is not None or config.early_stop_val_f1 is not None:
            need_train = config.early_stop_train_f1 or 0.0
            need_val = config.early_stop_val_f1 or 0.0
            if val_f1 >= need_val:
                train_f1 = evaluate_model(model, train_docs)["f1"]
                if train_f1 >= need_train:
                    stopped_early = True
                    break

    if not stopped_early:
        train_f1 = evaluate_model(model, train_docs)["f1"] if train_docs else 0.0

    final_val_f1 = val_curve[-1] if val_curve else 0.0
    # the retained checkpoint is the best-validation epoch
    if val_docs and best["val_f1"] >= 0.0:
        for n, p in model.params.items():
            p.tensor.data = best["arrays"][n]

    report = {
        "config": config.__dict__ | {"conv_channels": list(config.conv_channels)},
        "seed": config.seed,
        "dataset_hash": dataset_hash(config.data_dir),
        "epochs_run": len(loss_curve),
        "stopped_early": stopped_early,
        "loss_curve": loss_curve,
        "val_f1_curve": val_curve,
        "train_f1": train_f1,
        "final_val_f1": final_val_f1,
        "best_val_f1": max(best["val_f1"], 0.0),
        "best_epoch": best["epoch"],
        "epoch_seconds": timings,
    }
    return model, report


def sweep_k(config: Config, k_values) -> list:
    """Train and evaluate once per K with a shared seed; returns result rows."""
    if not k_values:
        raise ValueError("need at least one K value")
    rows = []
    for k in k_values:
        model, report = train(replace(config, k=int(k)))
        scores = evaluate_model(model, load_task(config)[0]["val"])
        rows.append({"k": int(k), "val_f1": scores["f1"], "best_epoch": report["best_epoch"]})
    return rows


ABLATIONS = (
    ("full", {}),
    ("no_spatial", {"no_spatial": True}),
    ("no_text", {"no_text": True}),
    ("no_visual", {"no_visual": True}),
    ("no_graph", {"no_graph": True}),
)


def ablate(config: Config, pair_classes=("date", "total")) -> list:
    """Train the full model and the four single-branch removals.

    Every variant shares the base seed, so branches that survive keep
    identical initial weights. Rows report micro F1 plus F1 restricted to
    the ambiguity-prone numeric classes.
    """
    rows = []
    for name, flags in ABLATIONS:
        variant = replace(config, **flags)
        model, report = train(variant)
        scores = evaluate_model(model, load_task(config)[0]["val"])
        rows.append(
            {
                "variant": name,
                "val_f1": scores["f1"],
                "pair_f1": class_subset_f1(scores, pair_classes),
                "best_epoch": report["best_epoch"],
            }
        )
    full = rows[0]["val_f1"]
    for row in rows:
        row["delta_vs_full"] = row["val_f1"] - full
    return rows
