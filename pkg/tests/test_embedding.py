"""Embedding branches: lookup, backbone, RoIAlign, sinusoids, fusion."""

import math

import numpy as np
import pytest

from grie import embedding as E
from grie import tensor as T
from grie.document import Document, normalize_boxes

from helpers import check_grad
from oracles import bilinear_point, roi_oracle

RNG = np.random.default_rng(424242)


def tiny_doc(texts, boxes, page=(32, 32)):
    w, h = page
    img = np.full((h, w), 255, dtype=np.uint8)
    return Document(0, texts, boxes, img, page_size=page)


def rect(x0, y0, x1, y1):
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]


# --- textual branch ---------------------------------------------------------


def test_textual_embed_gathers_table_rows():
    vocab = E.Vocab("ab")
    table = T.Tensor(np.arange(4 * 3, dtype=np.float32).reshape(4, 3))
    doc = tiny_doc(["ab"], [rect(0, 0, 10, 10)])
    te, mask = E.textual_embed(doc, vocab, table, max_len=4)
    np.testing.assert_allclose(te.data[0, 0], table.data[2])
    np.testing.assert_allclose(te.data[0, 1], table.data[3])
    assert mask[0].tolist() == [True, True, False, False]


def test_textual_embed_pads_with_zeros():
    vocab = E.Vocab("xy")
    table = T.Tensor(RNG.normal(size=(4, 5)))
    doc = tiny_doc(["x"], [rect(0, 0, 8, 8)])
    te, _ = E.textual_embed(doc, vocab, table, max_len=3)
    assert not te.data[0, 1:].any()


def test_textual_embed_unknown_char_uses_unk_row():
    vocab = E.Vocab("a")
    table = T.Tensor(RNG.normal(size=(3, 2)))
    doc = tiny_doc(["z"], [rect(0, 0, 8, 8)])
    te, _ = E.textual_embed(doc, vocab, table, max_len=2)
    np.testing.assert_allclose(te.data[0, 0], table.data[E.UNK_INDEX])


def test_textual_embed_identical_texts_identical_slices():
    vocab = E.Vocab("ab")
    table = T.Tensor(RNG.normal(size=(4, 3)))
    doc = tiny_doc(["ab", "ab"], [rect(0, 0, 8, 8), rect(0, 16, 8, 24)])
    te, _ = E.textual_embed(doc, vocab, table, max_len=4)
    np.testing.assert_array_equal(te.data[0], te.data[1])


def test_textual_embed_overlong_segment_rejected():
    doc = tiny_doc(["abcde"], [rect(0, 0, 8, 8)])
    with pytest.raises(ValueError, match="limit"):
        E.textual_embed(doc, E.Vocab("abcde"), T.Tensor(np.zeros((9, 2))), max_len=4)


# --- backbone ---------------------------------------------------------------


def make_convs(rng, channels=(4, 8, 8), dtype=np.float32, zero_bias=True):
    convs, c_in = [], 1
    for c_out in channels:
        k = T.Tensor(T.uniform_init(rng, (c_out, c_in, 3, 3), fan_in=9 * c_in).astype(dtype), requires_grad=True)
        b = T.Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        if not zero_bias:
            b.data = b.data + 0.1
        convs.append((k, b))
        c_in = c_out
    return convs


def test_backbone_zero_image_zero_bias_gives_zero_map():
    convs = make_convs(np.random.default_rng(0))
    out = E.backbone(np.zeros((16, 16), dtype=np.uint8), convs)
    assert not out.data.any()


def test_backbone_output_shape_quarter_resolution():
    convs = make_convs(np.random.default_rng(1), channels=(4, 8, 32))
    out = E.backbone(np.zeros((64, 64), dtype=np.uint8), convs)
    assert out.shape == (32, 16, 16)


def test_backbone_constant_image_constant_interior():
    convs = make_convs(np.random.default_rng(2))
    out = E.backbone(np.full((32, 32), 128, dtype=np.uint8), convs)
    interior = out.data[:, 2:-2, 2:-2]
    for ch in interior:
        assert np.ptp(ch) < 1e-5


def test_backbone_rejects_indivisible_page():
    with pytest.raises(ValueError, match="divisible by 4"):
        E.backbone(np.zeros((18, 16), dtype=np.uint8), make_convs(np.random.default_rng(3)))


# --- roi align --------------------------------------------------------------


def test_roi_align_constant_map():
    fmap = T.Tensor(np.full((2, 6, 6), 3.5, dtype=np.float32))
    out = E.roi_align(fmap, rect(3, 2, 19, 17), grid=3, scale=0.25)
    np.testing.assert_allclose(out.data, 3.5, rtol=1e-6)


def test_roi_align_integer_box_is_average_pooling():
    g = 3
    fm = RNG.normal(size=(1, 12, 12))
    # box covering map cells rows 2..8, cols 4..10 (pixel units, scale 1/4)
    quad = rect(4 * 4, 2 * 4, 10 * 4, 8 * 4)
    out = E.roi_align(T.Tensor(fm), quad, grid=g, scale=0.25)
    pooled = fm[0, 2:8, 4:10].reshape(g, 2, g, 2).mean(axis=(1, 3))
    np.testing.assert_allclose(out.data[0], pooled, rtol=1e-5, atol=1e-6)


def test_roi_align_matches_scalar_oracle():
    for trial in range(40):
        rng = np.random.default_rng(trial)
        h, w = int(rng.integers(4, 12)), int(rng.integers(4, 12))
        fm = rng.normal(size=(h, w))
        x0, y0 = rng.uniform(0, 4 * w - 4, size=2)[0], rng.uniform(0, 4 * h - 4)
        x1 = rng.uniform(x0, 4 * w)
        y1 = rng.uniform(y0, 4 * h)
        quad = rect(x0, y0, x1, y1)
        grid = int(rng.integers(1, 5))
        got = E.roi_align(T.Tensor(fm[None]), quad, grid=grid, scale=0.25).data[0]
        want = roi_oracle(fm, quad, grid, 0.25)
        np.testing.assert_allclose(got, want, atol=1e-5)


def test_roi_align_zero_area_box_replicates_point():
    fm = RNG.normal(size=(1, 8, 8))
    out = E.roi_align(T.Tensor(fm), rect(10, 12, 10, 12), grid=3, scale=0.25)
    sample = bilinear_point(fm[0], 2.5, 3.0)
    np.testing.assert_allclose(out.data[0], sample, rtol=1e-5)


def test_roi_align_grad_flows_to_fmap():
    quad = rect(2, 3, 17, 13)
    check_grad(
        lambda fm: T.tsum(T.power(E.roi_align(fm, quad, grid=2, scale=0.25), 2.0)),
        RNG.normal(size=(2, 6, 7)),
    )


# --- visual branch ----------------------------------------------------------


def test_visual_embed_identical_boxes_identical_rows():
    doc = tiny_doc(["ab", "cd"], [rect(4, 4, 20, 12), rect(4, 4, 20, 12)])
    fmap = T.Tensor(RNG.normal(size=(3, 8, 8)))
    kernel = T.Tensor(RNG.normal(size=(5, 3, 2, 2)))
    bias = T.Tensor(np.zeros((1, 5)))
    ve = E.visual_embed(doc, fmap, kernel, bias, grid=2, max_len=4)
    np.testing.assert_array_equal(ve.data[0], ve.data[1])


def test_visual_embed_rows_shared_within_segment():
    doc = tiny_doc(["abc"], [rect(0, 0, 24, 12)])
    fmap = T.Tensor(RNG.normal(size=(3, 8, 8)))
    kernel = T.Tensor(RNG.normal(size=(5, 3, 2, 2)))
    bias = T.Tensor(RNG.normal(size=(1, 5)))
    ve = E.visual_embed(doc, fmap, kernel, bias, grid=2, max_len=6)
    for j in range(1, 6):
        np.testing.assert_array_equal(ve.data[0, j], ve.data[0, 0])


def test_visual_embed_zero_everything_gives_zero():
    doc = tiny_doc(["ab"], [rect(0, 0, 16, 8)])
    fmap = T.Tensor(np.zeros((3, 8, 8)))
    kernel = T.Tensor(RNG.normal(size=(4, 3, 2, 2)))
    bias = T.Tensor(np.zeros((1, 4)))
    ve = E.visual_embed(doc, fmap, kernel, bias, grid=2, max_len=3)
    assert not ve.data.any()


# --- layout branch ----------------------------------------------------------


def test_sinusoidal_zero_offset():
    vec = E.sinusoidal(0.0, 8)
    np.testing.assert_allclose(vec[0::2], 0.0)
    np.testing.assert_allclose(vec[1::2], 1.0)


def test_sinusoidal_unit_frequency_component():
    assert abs(E.sinusoidal(math.pi / 2, 8)[0] - 1.0) < 1e-12


def test_sinusoidal_norm_bound():
    for x in (-500.0, 0.3, 77.7):
        assert np.linalg.norm(E.sinusoidal(x, 16)) <= math.sqrt(16) + 1e-9


def test_sinusoidal_odd_dim_rejected():
    with pytest.raises(ValueError, match="even"):
        E.sinusoidal(1.0, 7)


def base_doc(shift=(0, 0), page=(200, 100)):
    dx, dy = shift
    boxes = [
        rect(10 + dx, 5 + dy, 50 + dx, 15 + dy),
        rect(60 + dx, 40 + dy, 120 + dx, 52 + dy),
        rect(10 + dx, 70 + dy, 90 + dx, 82 + dy),
    ]
    return tiny_doc(["aa", "bb", "cc"], boxes, page=page)


def test_vertex_offsets_self_pair_is_zero():
    norm = normalize_boxes(base_doc())
    offs = E.vertex_offsets(norm, base_index=1)
    np.testing.assert_allclose(offs[1], np.zeros(8))


def test_vertex_offsets_swap_negates():
    norm = normalize_boxes(base_doc())
    offs_base0 = E.vertex_offsets(norm, base_index=0)
    offs_base2 = E.vertex_offsets(norm, base_index=2)
    np.testing.assert_allclose(offs_base0[2], -offs_base2[0], atol=1e-12)


def test_swap_negates_sin_keeps_cos():
    x = 13.25
    fwd, bwd = E.sinusoidal(x, 12), E.sinusoidal(-x, 12)
    np.testing.assert_allclose(bwd[0::2], -fwd[0::2], atol=1e-12)
    np.testing.assert_allclose(bwd[1::2], fwd[1::2], atol=1e-12)


def test_rel_pos_embed_translation_invariant():
    w_proj = T.Tensor(RNG.normal(size=(8 * 16, 6)).astype(np.float32))
    for shift in ((7, 3), (40, 12)):
        a = E.rel_pos_embed(normalize_boxes(base_doc()), 0, w_proj, 16, max_len=2)
        b = E.rel_pos_embed(normalize_boxes(base_doc(shift=shift)), 0, w_proj, 16, max_len=2)
        assert np.max(np.abs(a.data - b.data)) <= 1e-6


def test_rel_pos_embed_grad():
    norm = normalize_boxes(base_doc())
    check_grad(
        lambda w: T.tsum(T.power(E.rel_pos_embed(norm, 0, w, 8, max_len=2), 2.0)),
        RNG.normal(size=(8 * 8, 4)),
    )


# --- fusion -----------------------------------------------------------------


def build_encoder(rng, d, d_ff, dtype=np.float64):
    def w(shape, fan):
        return T.Tensor(T.uniform_init(rng, shape, fan, dtype=dtype), requires_grad=True)

    enc = {
        "wq": w((d, d), d), "bq": T.Tensor(np.zeros((1, d), dtype=dtype), requires_grad=True),
        "wk": w((d, d), d), "bk": T.Tensor(np.zeros((1, d), dtype=dtype), requires_grad=True),
        "wv": w((d, d), d), "bv": T.Tensor(np.zeros((1, d), dtype=dtype), requires_grad=True),
        "wo": w((d, d), d), "bo": T.Tensor(np.zeros((1, d), dtype=dtype), requires_grad=True),
        "ffn_w1": w((d, d_ff), d), "ffn_b1": T.Tensor(np.zeros((1, d_ff), dtype=dtype), requires_grad=True),
        "ffn_w2": w((d_ff, d), d_ff), "ffn_b2": T.Tensor(np.zeros((1, d), dtype=dtype), requires_grad=True),
        "ln1_g": T.Tensor(np.ones((1, d), dtype=dtype), requires_grad=True),
        "ln1_b": T.Tensor(np.zeros((1, d), dtype=dtype), requires_grad=True),
        "ln2_g": T.Tensor(np.ones((1, d), dtype=dtype), requires_grad=True),
        "ln2_b": T.Tensor(np.zeros((1, d), dtype=dtype), requires_grad=True),
    }
    return enc


def test_layer_norm_idempotent():
    x = T.Tensor(RNG.normal(size=(5, 8)) * 3 + 1)
    g = T.Tensor(np.ones((1, 8)))
    b = T.Tensor(np.zeros((1, 8)))
    once = E.layer_norm(x, g, b)
    twice = E.layer_norm(once, g, b)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-5)


def test_fuse_degenerate_encoder_is_layernorm_of_te():
    # single-char segments make uniform attention an exact pass-through:
    # wq = wk = 0, wv = wo = I, zero FFN, residuals then collapse to LN(2*TE)
    # which equals LN(TE) by scale invariance
    d = 6
    rng = np.random.default_rng(9)
    enc = build_encoder(rng, d, d_ff=4)
    for name in ("wq", "wk", "ffn_w1", "ffn_w2"):
        enc[name].data = np.zeros_like(enc[name].data)
    enc["wv"].data = np.eye(d)
    enc["wo"].data = np.eye(d)
    n, L = 3, 1
    te = T.Tensor(rng.normal(size=(n, L, d)))
    zeros = T.Tensor(np.zeros((n, L, d)))
    mask = np.ones((n, L), dtype=bool)
    out = E.fuse(te, zeros, zeros, mask, enc, heads=2)
    want = E.layer_norm(T.reshape(te, (n * L, d)), enc["ln1_g"], enc["ln1_b"])
    # scale invariance of layer norm is exact only at eps=0; allow eps-level slack
    np.testing.assert_allclose(out.data.reshape(n * L, d), want.data, atol=1e-4)


def test_fuse_padded_positions_do_not_leak():
    d, n, L = 4, 2, 5
    rng = np.random.default_rng(4)
    enc = build_encoder(rng, d, d_ff=8)
    mask = np.zeros((n, L), dtype=bool)
    mask[:, :3] = True
    te = rng.normal(size=(n, L, d))
    te_dirty = te.copy()
    te_dirty[:, 3:] = 99.0  # junk in padded rows
    zeros = T.Tensor(np.zeros((n, L, d)))
    clean = E.fuse(T.Tensor(te * mask[:, :, None]), zeros, zeros, mask, enc, heads=2)
    dirty = E.fuse(T.Tensor(te_dirty), zeros, zeros, mask, enc, heads=2)
    np.testing.assert_allclose(dirty.data[:, :3], clean.data[:, :3], atol=1e-6)


def test_fuse_permuting_segments_permutes_output():
    d, n, L = 4, 3, 3
    rng = np.random.default_rng(5)
    enc = build_encoder(rng, d, d_ff=6)
    mask = np.ones((n, L), dtype=bool)
    te = rng.normal(size=(n, L, d))
    ve = rng.normal(size=(n, L, d))
    pe = rng.normal(size=(n, L, d))
    out = E.fuse(T.Tensor(te), T.Tensor(ve), T.Tensor(pe), mask, enc, heads=2)
    perm = [2, 0, 1]
    out_p = E.fuse(T.Tensor(te[perm]), T.Tensor(ve[perm]), T.Tensor(pe[perm]), mask, enc, heads=2)
    np.testing.assert_allclose(out_p.data, out.data[perm], atol=1e-6)


def test_fuse_head_count_must_divide_width():
    enc = build_encoder(np.random.default_rng(0), 6, d_ff=4)
    z = T.Tensor(np.zeros((1, 2, 6)))
    with pytest.raises(ValueError, match="divisible"):
        E.fuse(z, z, z, np.ones((1, 2), dtype=bool), enc, heads=4)


def test_fuse_gradients_all_encoder_params():
    d, n, L = 4, 2, 3
    rng = np.random.default_rng(6)
    mask = np.ones((n, L), dtype=bool)
    mask[1, 2] = False
    te0 = rng.normal(size=(n, L, d))
    for name in ("wq", "wv", "ffn_w1", "ln1_g", "bo", "ln2_b"):
        enc = build_encoder(np.random.default_rng(6), d, d_ff=5)
        shape = enc[name].shape

        def build(p):
            enc[name] = p
            zeros = T.Tensor(np.zeros((n, L, d)))
            out = E.fuse(T.Tensor(te0 * mask[:, :, None]), zeros, zeros, mask, enc, heads=2)
            return T.tsum(T.power(out, 2.0))

        start = enc[name].data.astype(np.float64) + 0.01
        check_grad(build, start.reshape(shape), h=1e-5, tol=1e-5)


def test_fuse_grad_through_te():
    d, n, L = 4, 2, 2
    enc = build_encoder(np.random.default_rng(7), d, d_ff=4)
    mask = np.ones((n, L), dtype=bool)
    zeros = T.Tensor(np.zeros((n, L, d)))

    def build(te):
        return T.tsum(T.power(E.fuse(te, zeros, zeros, mask, enc, heads=2), 2.0))

    check_grad(build, np.random.default_rng(8).normal(size=(n, L, d)), h=1e-5, tol=1e-5)
