"""Multimodal character embedding: text, visual, and layout branches plus fusion.

Each document becomes three N x L x d tensors (N segments, L character slots,
model width d): character lookups, RoI visual features replicated across a
segment's characters, and a relative-position embedding against the first
segment in reading order. Fusion runs the summed branches through one
transformer encoder layer whose self-attention is scoped to the characters
of a segment.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .document import Document

PAD_INDEX = 0
UNK_INDEX = 1


class Vocab:
    """Character table with reserved PAD and UNK rows."""

    def __init__(self, chars: str):
        self.chars = chars
        self.index = {c: i + 2 for i, c in enumerate(chars)}

    def __len__(self):
        return len(self.chars) + 2

    def encode(self, text: str) -> list:
        return [self.index.get(c, UNK_INDEX) for c in text]


def char_mask(doc: Document, max_len: int) -> np.ndarray:
    """(N, L) flags marking real character positions."""
    n = doc.n_segments
    mask = np.zeros((n, max_len), dtype=bool)
    for i, text in enumerate(doc.segments):
        if len(text) > max_len:
            raise ValueError(f"segment {i} has {len(text)} chars, limit is {max_len}")
        mask[i, : len(text)] = True
    return mask


def textual_embed(doc: Document, vocab: Vocab, char_table: T.Tensor, max_len: int):
    """(TE, mask): per-character embedding rows, zero at padding."""
    mask = char_mask(doc, max_len)
    n = doc.n_segments
    indices = np.full((n, max_len), PAD_INDEX, dtype=np.int64)
    for i, text in enumerate(doc.segments):
        indices[i, : len(text)] = vocab.encode(text)
    d = char_table.shape[1]
    flat = T.lookup(char_table, indices.reshape(-1))
    te = T.reshape(flat, (n, max_len, d))
    mask3 = T.repeat(T.Tensor(mask[:, :, None].astype(char_table.dtype)), d, axis=2)
    return T.mul(te, mask3), mask


# ---------------------------------------------------------------------------
# visual branch


def backbone(image: np.ndarray, convs: list) -> T.Tensor:
    """Three conv+relu stages at strides 2, 2, 1 over a greyscale page.

    ``convs`` holds (kernel, bias) tensor pairs; kernels are 3x3, biases are
    per-channel. Output is a C x H/4 x W/4 feature map.
    """
    h, w = image.shape
    if h % 4 or w % 4:
        raise ValueError(f"page {w}x{h} must have height and width divisible by 4")
    x = T.Tensor((image.astype(np.float32) / 255.0)[None, :, :])
    for (kernel, bias), stride in zip(convs, (2, 2, 1)):
        x = T.conv2d(x, kernel, stride=stride, padding=1)
        c, hh, ww = x.shape
        b = T.repeat(T.repeat(T.reshape(bias, (c, 1, 1)), hh, axis=1), ww, axis=2)
        x = T.relu(T.add(x, b))
    return x


def _bilinear_weights(h: int, w: int, quad, grid: int, scale: float) -> np.ndarray:
    """(h*w, grid*grid) constant matrix: column k holds the sample weights of bin k.

    Bin centers sample the feature map under the pixel-center convention
    (cell (r, c) covers coordinate (c + 0.5, r + 0.5)); out-of-map samples
    clamp to the border cells. A zero-area box collapses every bin onto the
    same point.
    """
    quad = np.asarray(quad, dtype=np.float64) * scale
    x0, x1 = quad[:, 0].min(), quad[:, 0].max()
    y0, y1 = quad[:, 1].min(), quad[:, 1].max()
    weights = np.zeros((h * w, grid * grid))
    for i in range(grid):
        cy = y0 + (i + 0.5) * (y1 - y0) / grid
        v = cy - 0.5
        r0 = int(np.floor(v))
        fv = v - r0
        for j in range(grid):
            cx = x0 + (j + 0.5) * (x1 - x0) / grid
            u = cx - 0.5
            c0 = int(np.floor(u))
            fu = u - c0
            k = i * grid + j
            for dr, wy in ((0, 1.0 - fv), (1, fv)):
                for dc, wx in ((0, 1.0 - fu), (1, fu)):
                    if wy * wx == 0.0:
                        continue
                    r = min(max(r0 + dr, 0), h - 1)
                    c = min(max(c0 + dc, 0), w - 1)
                    weights[r * w + c, k] += wy * wx
    return weights


def roi_align(fmap: T.Tensor, quad, grid: int, scale: float = 0.25) -> T.Tensor:
    """C x g x g crop of the feature map under a box, one bilinear sample per bin."""
    c, h, w = fmap.shape
    weights = _bilinear_weights(h, w, quad, grid, scale)
    flat = T.reshape(fmap, (c, h * w))
    out = T.matmul(flat, T.Tensor(weights.astype(np.float32)))
    return T.reshape(out, (c, grid, grid))


def visual_embed(doc: Document, fmap: T.Tensor, collapse_kernel: T.Tensor, collapse_bias: T.Tensor, grid: int, max_len: int) -> T.Tensor:
    """(N, L, d) visual rows; every character of a segment shares its segment's row."""
    d = collapse_kernel.shape[0]
    rows = []
    for quad in doc.boxes:
        roi = roi_align(fmap, quad, grid)
        vec = T.conv2d(roi, collapse_kernel, stride=1, padding=0)
        rows.append(T.reshape(vec, (1, d)))
    se = T.concat(rows, axis=0)
    se = T.add(se, T.repeat(collapse_bias, doc.n_segments, axis=0))
    return T.repeat(T.reshape(se, (doc.n_segments, 1, d)), max_len, axis=1)


# ---------------------------------------------------------------------------
# layout branch


def sinusoidal(x: float, dim: int) -> np.ndarray:
    """Interleaved (sin, cos) pairs over geometrically spaced frequencies."""
    if dim % 2:
        raise ValueError(f"sinusoidal dimension must be even, got {dim}")
    k = np.arange(dim // 2, dtype=np.float64)
    angle = float(x) / np.power(10000.0, 2.0 * k / dim)
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def vertex_offsets(norm_boxes: np.ndarray, base_index: int) -> np.ndarray:
    """(N, 8) per-vertex coordinate differences against the base segment's box.

    Order: top-left x, y, top-right x, y, bottom-right x, y, bottom-left x, y.
    """
    boxes = np.asarray(norm_boxes, dtype=np.float64)
    return (boxes - boxes[base_index]).reshape(len(boxes), 8)


def rel_pos_embed(norm_boxes: np.ndarray, base_index: int, w_proj: T.Tensor, d_sinu: int, max_len: int) -> T.Tensor:
    """(N, L, d) layout rows: sinusoids of the 8 offsets, concatenated, projected."""
    offsets = vertex_offsets(norm_boxes, base_index)
    n = offsets.shape[0]
    feats = np.empty((n, 8 * d_sinu), dtype=np.float32)
    for i in range(n):
        feats[i] = np.concatenate([sinusoidal(v, d_sinu) for v in offsets[i]])
    d = w_proj.shape[1]
    pe = T.matmul(T.Tensor(feats), w_proj)
    return T.repeat(T.reshape(pe, (n, 1, d)), max_len, axis=1)


# ---------------------------------------------------------------------------
# fusion


def layer_norm(x: T.Tensor, gamma: T.Tensor, beta: T.Tensor, eps: float = 1e-5) -> T.Tensor:
    """Row-wise normalization of a (M, d) tensor with learned gain and shift."""
    m, d = x.shape
    mean = T.repeat(T.scale(T.tsum(x, axis=1, keepdims=True), 1.0 / d), d, axis=1)
    centered = T.sub(x, mean)
    var = T.repeat(T.scale(T.tsum(T.mul(centered, centered), axis=1, keepdims=True), 1.0 / d), d, axis=1)
    inv = T.power(T.add_const(var, eps), -0.5)
    normed = T.mul(centered, inv)
    return T.add(T.mul(normed, T.repeat(gamma, m, axis=0)), T.repeat(beta, m, axis=0))


def _row_bias(x: T.Tensor, b: T.Tensor) -> T.Tensor:
    return T.add(x, T.repeat(b, x.shape[0], axis=0))


def _softmax_last(x: T.Tensor) -> T.Tensor:
    lse = T.logsumexp(x, axis=x.data.ndim - 1, keepdims=True)
    return T.exp(T.sub(x, T.repeat(lse, x.shape[-1], axis=x.data.ndim - 1)))


def fuse(te: T.Tensor, ve: T.Tensor, pe: T.Tensor, mask: np.ndarray, enc: dict, heads: int, dropout_rate: float = 0.0, rng=None) -> T.Tensor:
    """One transformer encoder layer over TE + VE + PE, per-segment attention.

    ``enc`` maps names (wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, ffn_w1,
    ffn_b1, ffn_w2, ffn_b2, ln2_g, ln2_b) to tensors. Padded positions are
    excluded from attention via an additive key mask.
    """
    n, L, d = te.shape
    if d % heads:
        raise ValueError(f"model width {d} is not divisible by {heads} heads")
    dh = d // heads

    x = T.add(T.add(te, ve), pe)
    x2 = T.reshape(x, (n * L, d))

    def split_heads(t2):
        return T.reshape(T.transpose(T.reshape(t2, (n, L, heads, dh)), (0, 2, 1, 3)), (n * heads, L, dh))

    q = split_heads(_row_bias(T.matmul(x2, enc["wq"]), enc["bq"]))
    k = split_heads(_row_bias(T.matmul(x2, enc["wk"]), enc["bk"]))
    v = split_heads(_row_bias(T.matmul(x2, enc["wv"]), enc["bv"]))

    scores = T.scale(T.bmm(q, T.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    key_add = np.where(mask, 0.0, -1e9).astype(np.float32)  # (n, L)
    key_add = np.broadcast_to(key_add[:, None, None, :], (n, heads, L, L)).reshape(n * heads, L, L)
    attn = _softmax_last(T.add_const(scores, key_add))

    ctx = T.bmm(attn, v)  # (n*heads, L, dh)
    ctx = T.reshape(T.transpose(T.reshape(ctx, (n, heads, L, dh)), (0, 2, 1, 3)), (n * L, d))
    ctx = _row_bias(T.matmul(ctx, enc["wo"]), enc["bo"])
    if dropout_rate > 0.0:
        ctx = T.dropout(ctx, dropout_rate, rng)

    h1 = layer_norm(T.add(x2, ctx), enc["ln1_g"], enc["ln1_b"])
    ff = _row_bias(T.matmul(T.relu(_row_bias(T.matmul(h1, enc["ffn_w1"]), enc["ffn_b1"])), enc["ffn_w2"]), enc["ffn_b2"])
    if dropout_rate > 0.0:
        ff = T.dropout(ff, dropout_rate, rng)
    out = layer_norm(T.add(h1, ff), enc["ln2_g"], enc["ln2_b"])
    return T.reshape(out, (n, L, d))
