"""Character sequence labeling: BiLSTM emissions, CRF loss, Viterbi, entity F1.

The document's segments are serialized top-to-bottom, left-to-right into one
character sequence. A bidirectional LSTM scores BIO tags per character, a
linear-chain CRF with virtual START/END states provides the training loss
and decoding structure, and segment labels come from a majority vote over
the decoded character tags.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from . import tensor as T
from .document import Document, normalize_boxes, reading_order

NEG_FILL = -1e4  # stand-in for forbidden transitions; never enters the loss


class TagSet:
    """BIO tags for a fixed class list, plus virtual START/END transition states."""

    def __init__(self, classes):
        self.classes = list(classes)
        self.tags = ["O"]
        for cls in self.classes:
            self.tags += [f"B-{cls}", f"I-{cls}"]
        self.index = {t: i for i, t in enumerate(self.tags)}
        self.n_tags = len(self.tags)
        self.start = self.n_tags
        self.end = self.n_tags + 1

    def encode(self, tags) -> list:
        return [self.index[t] for t in tags]

    def tag_class(self, tag_name: str) -> str:
        return tag_name[2:] if tag_name.startswith(("B-", "I-")) else "O"


def init_transitions(tagset: TagSet, rng, strict: bool = False) -> np.ndarray:
    """(n_tags+2)^2 transition scores with START/END sentinels.

    Transitions into START and out of END are fixed at a large negative
    value; they sit outside every slice the loss reads, so they never move.
    With ``strict`` set, BIO-illegal transitions (anything entering I-x from
    outside the x entity) start at the same floor.
    """
    n = tagset.n_tags
    mat = T.uniform_init(rng, (n + 2, n + 2), fan_in=n + 2).astype(np.float32)
    mat[:, tagset.start] = NEG_FILL
    mat[tagset.end, :] = NEG_FILL
    mat[tagset.start, tagset.end] = NEG_FILL
    if strict:
        for j, tag in enumerate(tagset.tags):
            if not tag.startswith("I-"):
                continue
            legal_prev = {f"B-{tag[2:]}", tag}
            for i, prev in enumerate(tagset.tags):
                if prev not in legal_prev:
                    mat[i, j] = NEG_FILL
            mat[tagset.start, j] = NEG_FILL
    return mat


# ---------------------------------------------------------------------------
# serialization


def order_document(doc: Document, e_final: T.Tensor, mask: np.ndarray):
    """Concatenate character rows left-to-right, top-to-bottom.

    Returns (DE, ordered segment indices, spans) where spans[k] is the
    (start, stop) row range of ordered segment k inside DE.
    """
    order = reading_order(normalize_boxes(doc))
    pieces, spans, pos = [], [], 0
    for i in order:
        n_chars = int(mask[i].sum())
        pieces.append(T.tslice(e_final, (i, slice(0, n_chars))))
        spans.append((pos, pos + n_chars))
        pos += n_chars
    return T.concat(pieces, axis=0), order, spans


def ordered_gold(doc: Document, order, tagset: TagSet) -> list:
    out = []
    for i in order:
        out += tagset.encode(doc.gold_tags[i])
    return out


# ---------------------------------------------------------------------------
# BiLSTM emissions


def _lstm_pass(xs, p: dict, prefix: str, hidden: int):
    """One direction over a list of (1, d) rows; returns list of (1, H) states."""
    wx, wh, b = p[f"{prefix}_wx"], p[f"{prefix}_wh"], p[f"{prefix}_b"]
    h = T.Tensor(np.zeros((1, hidden), dtype=wx.dtype))
    c = T.Tensor(np.zeros((1, hidden), dtype=wx.dtype))
    states = []
    for x in xs:
        gates = T.add(T.add(T.matmul(x, wx), T.matmul(h, wh)), b)
        i = T.sigmoid(T.tslice(gates, (slice(None), slice(0, hidden))))
        f = T.sigmoid(T.tslice(gates, (slice(None), slice(hidden, 2 * hidden))))
        g = T.tanh(T.tslice(gates, (slice(None), slice(2 * hidden, 3 * hidden))))
        o = T.sigmoid(T.tslice(gates, (slice(None), slice(3 * hidden, 4 * hidden))))
        c = T.add(T.mul(f, c), T.mul(i, g))
        h = T.mul(o, T.tanh(c))
        states.append(h)
    return states


def bilstm_project(de: T.Tensor, p: dict, hidden: int) -> T.Tensor:
    """(M, n_tags) emission scores from a BiLSTM over the document series.

    ``p`` holds fwd_wx, fwd_wh, fwd_b, bwd_wx, bwd_wh, bwd_b, proj_w, proj_b.
    """
    m = de.shape[0]
    xs = [T.tslice(de, (slice(t, t + 1), slice(None))) for t in range(m)]
    fwd = _lstm_pass(xs, p, "fwd", hidden)
    bwd = _lstm_pass(xs[::-1], p, "bwd", hidden)[::-1]
    rows = [T.concat([f, b], axis=1) for f, b in zip(fwd, bwd)]
    feat = T.concat(rows, axis=0)
    z = T.matmul(feat, p["proj_w"])
    return T.add(z, T.repeat(p["proj_b"], m, axis=0))


# ---------------------------------------------------------------------------
# CRF


def crf_score(z: T.Tensor, trans: T.Tensor, y, tagset: TagSet) -> T.Tensor:
    """Path score: start transition + pairwise transitions + end + emissions."""
    m, n = z.shape
    if len(y) != m:
        raise ValueError(f"gold path length {len(y)} does not match {m} emission rows")
    onehot = np.zeros((m, n), dtype=z.dtype)
    onehot[np.arange(m), y] = 1.0
    emit = T.tsum(T.mul(z, T.Tensor(onehot)))

    pair_counts = np.zeros(trans.shape, dtype=trans.dtype)
    pair_counts[tagset.start, y[0]] += 1.0
    for a, b in zip(y[:-1], y[1:]):
        pair_counts[a, b] += 1.0
    pair_counts[y[-1], tagset.end] += 1.0
    return T.add(emit, T.tsum(T.mul(trans, T.Tensor(pair_counts))))


def crf_partition(z: T.Tensor, trans: T.Tensor, tagset: TagSet) -> T.Tensor:
    """Forward algorithm in log space; only finite blocks of ``trans`` are read."""
    m, n = z.shape
    start_row = T.tslice(trans, (slice(tagset.start, tagset.start + 1), slice(0, n)))
    inner = T.tslice(trans, (slice(0, n), slice(0, n)))
    end_col = T.tslice(trans, (slice(0, n), slice(tagset.end, tagset.end + 1)))

    alpha = T.add(start_row, T.tslice(z, (slice(0, 1), slice(None))))
    for t in range(1, m):
        mat = T.add(T.repeat(T.transpose(alpha, (1, 0)), n, axis=1), inner)
        alpha = T.add(
            T.reshape(T.logsumexp(mat, axis=0), (1, n)),
            T.tslice(z, (slice(t, t + 1), slice(None))),
        )
    final = T.add(alpha, T.transpose(end_col, (1, 0)))
    return T.logsumexp(T.reshape(final, (n,)), axis=0)


def crf_loss(z: T.Tensor, trans: T.Tensor, y, tagset: TagSet) -> T.Tensor:
    """Negative log-likelihood of the gold path."""
    return T.sub(crf_partition(z, trans, tagset), crf_score(z, trans, y, tagset))


def viterbi(z: np.ndarray, trans: np.ndarray, tagset: TagSet) -> list:
    """Highest-scoring tag path; ties resolve to the lower tag index."""
    z = np.asarray(z, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    m, n = z.shape
    inner = trans[:n, :n]
    delta = trans[tagset.start, :n] + z[0]
    back = np.zeros((m, n), dtype=np.int64)
    for t in range(1, m):
        cand = delta[:, None] + inner
        back[t] = np.argmax(cand, axis=0)  # first max = lowest index
        delta = cand[back[t], np.arange(n)] + z[t]
    delta = delta + trans[:n, tagset.end]
    tag = int(np.argmax(delta))
    path = [tag]
    for t in range(m - 1, 0, -1):
        tag = int(back[t, tag])
        path.append(tag)
    return path[::-1]


# ---------------------------------------------------------------------------
# entity extraction and scoring


def majority_vote(decoded_tags) -> str:
    """Segment label: plurality class of its character tags.

    O counts as a class; ties prefer a non-O class, then the alphabetically
    first class.
    """
    counts = Counter(t[2:] if t.startswith(("B-", "I-")) else "O" for t in decoded_tags)
    return min(counts, key=lambda cls: (-counts[cls], cls == "O", cls))


def extract_entities(segment_classes, segment_texts) -> dict:
    """class -> extracted text; multi-segment classes join with single spaces.

    Inputs are in reading order. Class "O" (and decoy class "other") yields
    no entity.
    """
    joined = {}
    for cls, text in zip(segment_classes, segment_texts):
        if cls in ("O", "other"):
            continue
        joined[cls] = f"{joined[cls]} {text}" if cls in joined else text
    return joined


def gold_entities(doc: Document) -> dict:
    order = reading_order(normalize_boxes(doc))
    classes, texts = [], []
    for i in order:
        tags = doc.gold_tags[i]
        cls = next((t[2:] for t in tags if t != "O"), "O")
        classes.append(cls)
        texts.append(doc.segments[i])
    return extract_entities(classes, texts)


def f1_counts(tp: int, n_pred: int, n_gold: int):
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def entity_scores(doc_pairs, classes=None) -> dict:
    """Micro and per-class exact-match P/R/F1 over (document, class, text) triples.

    ``doc_pairs`` is a list of (predicted, gold) entity dicts, one pair per
    document.
    """
    tally = {}
    for pred, gold in doc_pairs:
        for cls in set(pred) | set(gold):
            row = tally.setdefault(cls, {"tp": 0, "pred": 0, "gold": 0})
            row["pred"] += int(cls in pred)
            row["gold"] += int(cls in gold)
            row["tp"] += int(cls in pred and cls in gold and pred[cls] == gold[cls])
    if classes is not None:
        for cls in classes:
            tally.setdefault(cls, {"tp": 0, "pred": 0, "gold": 0})
    totals = {k: sum(row[k] for row in tally.values()) for k in ("tp", "pred", "gold")}
    p, r, f1 = f1_counts(totals["tp"], totals["pred"], totals["gold"])
    per_class = {}
    for cls, row in sorted(tally.items()):
        cp, cr, cf1 = f1_counts(row["tp"], row["pred"], row["gold"])
        per_class[cls] = {"precision": cp, "recall": cr, "f1": cf1, **row}
    return {"precision": p, "recall": r, "f1": f1, "per_class": per_class, **totals}


def entity_f1(doc_pairs) -> tuple:
    scores = entity_scores(doc_pairs)
    return scores["precision"], scores["recall"], scores["f1"]
