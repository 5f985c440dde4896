"""Full pipeline model: embed, revise the graph, serialize, score, decode."""

from __future__ import annotations

import json

import numpy as np

from . import crf, embedding, graph
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config, config_from_dict
from .document import Document, normalize_boxes, reading_order
from .rand import substream


def _text_to_f32(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def _f32_to_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode("utf-8")


class Model:
    """Holds named parameters and composes the per-document forward pass."""

    def __init__(self, config: Config, vocab: embedding.Vocab, tagset: crf.TagSet):
        self.config = config
        self.vocab = vocab
        self.tagset = tagset
        self.params = {}
        self._build()

    # --- parameters --------------------------------------------------------

    def _add(self, name: str, data: np.ndarray) -> T.Tensor:
        p = T.Parameter(name, data)
        self.params[name] = p
        return p.tensor

    def _weight(self, name: str, shape, fan_in: int) -> T.Tensor:
        rng = substream(self.config.seed, "init", name)
        return self._add(name, T.uniform_init(rng, shape, fan_in))

    def _zeros(self, name: str, shape) -> T.Tensor:
        return self._add(name, np.zeros(shape, dtype=np.float32))

    def _ones(self, name: str, shape) -> T.Tensor:
        return self._add(name, np.ones(shape, dtype=np.float32))

    def _build(self):
        cfg = self.config
        d, g = cfg.d, cfg.roi_grid
        self._weight("emb.char_table", (len(self.vocab), d), d)

        c_in = 1
        for i, c_out in enumerate(cfg.conv_channels, start=1):
            self._weight(f"backbone.conv{i}.w", (c_out, c_in, 3, 3), 9 * c_in)
            self._zeros(f"backbone.conv{i}.b", (c_out,))
            c_in = c_out
        self._weight("visual.collapse.w", (d, c_in, g, g), c_in * g * g)
        self._zeros("visual.collapse.b", (1, d))

        self._weight("pe.proj", (8 * cfg.d_sinu, d), 8 * cfg.d_sinu)

        for name in ("wq", "wk", "wv", "wo"):
            self._weight(f"enc.{name}", (d, d), d)
            self._zeros(f"enc.b{name[1]}", (1, d))
        d_ff = 4 * d
        self._weight("enc.ffn_w1", (d, d_ff), d)
        self._zeros("enc.ffn_b1", (1, d_ff))
        self._weight("enc.ffn_w2", (d_ff, d), d_ff)
        self._zeros("enc.ffn_b2", (1, d))
        for i in (1, 2):
            self._ones(f"enc.ln{i}_g", (1, d))
            self._zeros(f"enc.ln{i}_b", (1, d))

        self._weight("graph.w1", (d, cfg.d_n), d)
        self._weight("graph.w2", (cfg.d_n, d), cfg.d_n)
        self._weight("graph.w3", (d, d), d)

        h = cfg.d_lstm
        for prefix in ("fwd", "bwd"):
            self._weight(f"lstm.{prefix}_wx", (d, 4 * h), d)
            self._weight(f"lstm.{prefix}_wh", (h, 4 * h), h)
            self._zeros(f"lstm.{prefix}_b", (1, 4 * h))
        self._weight("lstm.proj_w", (2 * h, self.tagset.n_tags), 2 * h)
        self._zeros("lstm.proj_b", (1, self.tagset.n_tags))

        trans = crf.init_transitions(
            self.tagset, substream(cfg.seed, "init", "crf.trans"), strict=cfg.strict_transitions
        )
        self._add("crf.trans", trans)

    def tensors(self, *names) -> dict:
        return {n.split(".")[-1]: self.params[n].tensor for n in names}

    def trainable(self) -> list:
        """Parameters that participate under the current ablation flags."""
        cfg = self.config
        skip = set()
        if cfg.no_text:
            skip.add("emb.")
        if cfg.no_visual:
            skip.update(("backbone.", "visual."))
        if cfg.no_spatial:
            skip.add("pe.")
        if cfg.no_graph:
            skip.add("graph.")
        return [p for n, p in sorted(self.params.items()) if not any(n.startswith(s) for s in skip)]

    # --- forward pieces ------------------------------------------------------

    def embed(self, doc: Document, train: bool = False, rng=None):
        """Fused character embeddings (N, L, d) plus the validity mask."""
        cfg = self.config
        n, L, d = doc.n_segments, cfg.max_len, cfg.d
        mask = embedding.char_mask(doc, L)
        zeros = lambda: T.Tensor(np.zeros((n, L, d), dtype=np.float32))

        if cfg.no_text:
            te = zeros()
        else:
            te, _ = embedding.textual_embed(doc, self.vocab, self.params["emb.char_table"].tensor, L)

        if cfg.no_visual:
            ve = zeros()
        else:
            convs = [
                (self.params[f"backbone.conv{i}.w"].tensor, self.params[f"backbone.conv{i}.b"].tensor)
                for i in range(1, len(cfg.conv_channels) + 1)
            ]
            fmap = embedding.backbone(doc.image, convs)
            ve = embedding.visual_embed(
                doc,
                fmap,
                self.params["visual.collapse.w"].tensor,
                self.params["visual.collapse.b"].tensor,
                cfg.roi_grid,
                L,
            )

        if cfg.no_spatial:
            pe = zeros()
        else:
            norm = normalize_boxes(doc)
            base = reading_order(norm)[0]
            pe = embedding.rel_pos_embed(norm, base, self.params["pe.proj"].tensor, cfg.d_sinu, L)

        enc = {
            key: self.params[f"enc.{key}"].tensor
            for key in (
                "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                "ln1_g", "ln1_b", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2", "ln2_g", "ln2_b",
            )
        }
        rate = cfg.dropout if train else 0.0
        e = embedding.fuse(te, ve, pe, mask, enc, cfg.heads, rate, rng)
        return e, mask

    def revise_graph(self, e: T.Tensor, mask: np.ndarray):
        """(E_final, revised adjacency or None) for the graph stage."""
        cfg = self.config
        n = e.shape[0]
        if cfg.no_graph:
            se_prime = T.Tensor(np.zeros((n, cfg.d), dtype=np.float32))
            return graph.broadcast_to_chars(se_prime, e, mask), None
        a = graph.identity_graph(n)
        se = graph.aggregate_segments(e, mask)
        he = graph.hidden_embed(se, a, self.params["graph.w1"].tensor, self.params["graph.w2"].tensor)
        s = graph.similarity_knn(he, cfg.k)
        a_rev = graph.revise(a, s)
        se_prime = graph.graph_conv(a_rev, se, self.params["graph.w3"].tensor)
        return graph.broadcast_to_chars(se_prime, e, mask), a_rev

    def emissions(self, doc: Document, train: bool = False, rng=None):
        e, mask = self.embed(doc, train=train, rng=rng)
        e_final, a_rev = self.revise_graph(e, mask)
        de, order, spans = crf.order_document(doc, e_final, mask)
        z = crf.bilstm_project(
            de,
            {
                "fwd_wx": self.params["lstm.fwd_wx"].tensor,
                "fwd_wh": self.params["lstm.fwd_wh"].tensor,
                "fwd_b": self.params["lstm.fwd_b"].tensor,
                "bwd_wx": self.params["lstm.bwd_wx"].tensor,
                "bwd_wh": self.params["lstm.bwd_wh"].tensor,
                "bwd_b": self.params["lstm.bwd_b"].tensor,
                "proj_w": self.params["lstm.proj_w"].tensor,
                "proj_b": self.params["lstm.proj_b"].tensor,
            },
            self.config.d_lstm,
        )
        return z, order, spans, a_rev

    # --- training and inference ----------------------------------------------

    def loss(self, doc: Document, rng=None) -> T.Tensor:
        z, order, _, _ = self.emissions(doc, train=rng is not None, rng=rng)
        y = crf.ordered_gold(doc, order, self.tagset)
        return crf.crf_loss(z, self.params["crf.trans"].tensor, y, self.tagset)

    def decode(self, doc: Document) -> dict:
        """Viterbi tags, per-segment majority labels, and extracted entities."""
        z, order, spans, a_rev = self.emissions(doc, train=False)
        path = crf.viterbi(z.data, self.params["crf.trans"].data, self.tagset)
        tag_names = [self.tagset.tags[t] for t in path]

        seg_tags = {}
        seg_label = {}
        for k, i in enumerate(order):
            lo, hi = spans[k]
            seg_tags[i] = tag_names[lo:hi]
            seg_label[i] = crf.majority_vote(seg_tags[i])
        ordered_classes = [seg_label[i] for i in order]
        ordered_texts = [doc.segments[i] for i in order]
        entities = crf.extract_entities(ordered_classes, ordered_texts)
        return {
            "doc_id": doc.doc_id,
            "order": order,
            "char_tags": seg_tags,
            "segment_labels": seg_label,
            "entities": entities,
            "adjacency": None if a_rev is None else a_rev.data,
        }

    # --- persistence -----------------------------------------------------------

    def save(self, path):
        arrays = {name: p.data for name, p in self.params.items()}
        arrays["meta.config_json"] = _text_to_f32(self.config.to_json())
        arrays["meta.vocab_chars"] = _text_to_f32(self.vocab.chars)
        arrays["meta.tag_classes"] = _text_to_f32(json.dumps(self.tagset.classes))
        save_checkpoint(path, arrays)


def load_model(path) -> Model:
    arrays = load_checkpoint(path)
    config = config_from_dict(json.loads(_f32_to_text(arrays.pop("meta.config_json"))))
    vocab = embedding.Vocab(_f32_to_text(arrays.pop("meta.vocab_chars")))
    tagset = crf.TagSet(json.loads(_f32_to_text(arrays.pop("meta.tag_classes"))))
    model = Model(config, vocab, tagset)
    missing = sorted(set(model.params) - set(arrays))
    unexpected = sorted(set(arrays) - set(model.params))
    if missing or unexpected:
        raise ValueError(f"checkpoint mismatch: missing {missing}, unexpected {unexpected}")
    for name, value in arrays.items():
        p = model.params[name]
        if p.data.shape != value.shape:
            raise ValueError(f"checkpoint {name}: shape {value.shape} != model {p.data.shape}")
        p.tensor.data = value
    return model
