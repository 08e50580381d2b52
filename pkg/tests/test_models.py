import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hwgen.dataio import StyleSet
from hwgen.discriminator import Discriminator, d_hinge_loss, g_hinge_loss
from hwgen.generator import GenConfig, Generator, final_grid, generate
from hwgen.glyphs import render_text
from hwgen.nnblocks import BlockConfig, finite_diff_check
from hwgen.recognizer import Charset, Recognizer, greedy_decode
from hwgen.writerid import WriterIdentifier, classify_writer, embed_style, writer_loss

BLOCK = BlockConfig(d_model=16, n_heads=2, d_ff=32, n_layers=1)


def _img(w, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(1, 32, w, generator=g) * 2 - 1


# ---------------------------------------------------------------- writer identifier


def test_style_embedding_token_count():
    torch.manual_seed(0)
    w = WriterIdentifier(BLOCK, 3)
    emb = embed_style(StyleSet(0, [_img(80)]), w)
    assert emb.tokens.shape == (1, 80, 16)
    torch.testing.assert_close(emb.pooled, emb.tokens.mean(1), atol=1e-6, rtol=0)


def test_identical_style_images_give_identical_blocks():
    torch.manual_seed(0)
    w = WriterIdentifier(BLOCK, 3)
    img = _img(48)
    emb = w.embed([img] * 15)
    blocks = emb.tokens.view(15, -1, 16)
    assert all(torch.equal(blocks[0], b) for b in blocks)


def test_cnn_writer_encoder_uses_same_grid():
    torch.manual_seed(0)
    w = WriterIdentifier(BLOCK, 3, use_vit=False)
    assert w.embed([_img(80)]).tokens.shape == (1, 80, 16)


def test_writer_rejects_bad_height():
    with pytest.raises(ValueError):
        WriterIdentifier(BLOCK, 2).embed([torch.zeros(1, 16, 32)])


def test_classifier_head():
    torch.manual_seed(0)
    w = WriterIdentifier(BLOCK, 5)
    emb = w.embed([_img(32)])
    logits = classify_writer(emb, w)
    assert logits.shape == (1, 5)
    torch.testing.assert_close(logits.softmax(-1).sum(), torch.tensor(1.0), atol=1e-6, rtol=0)
    with torch.no_grad():
        w.head.weight.zero_()
    assert torch.all(classify_writer(emb, w) == 0)


def test_writer_loss_values():
    # direct evaluation: -log softmax = log(1 + e^-20)
    val = float(writer_loss(torch.tensor([10.0, -10.0], dtype=torch.float64), 0))
    assert val == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-9)
    assert val < 1e-6
    assert float(writer_loss(torch.zeros(7, dtype=torch.float64), 3)) == pytest.approx(math.log(7))
    with pytest.raises(IndexError):
        writer_loss(torch.zeros(3), 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8), st.data())
def test_writer_loss_nonnegative(logits, data):
    i = data.draw(st.integers(0, len(logits) - 1))
    assert float(writer_loss(torch.tensor(logits, dtype=torch.float64), i)) >= 0


def test_different_writers_embed_differently():
    torch.manual_seed(0)
    w = WriterIdentifier(BLOCK, 2)
    for seed in range(5):
        a = w.embed([_img(48, seed)]).pooled
        b = w.embed([_img(48, seed + 100)]).pooled
        assert not torch.allclose(a, b)


# ---------------------------------------------------------------- generator


def _gen(**kw):
    torch.manual_seed(0)
    return Generator(GenConfig(block=BLOCK, decoder_channels=(8, 4), **kw))


@pytest.mark.parametrize("n_scales,L,grid", [(1, 3, (2, 6)), (2, 3, (4, 12)), (3, 2, (8, 16))])
def test_refine_grid(n_scales, L, grid):
    assert final_grid(n_scales, L) == grid
    g = _gen(n_scales=n_scales)
    fmap = g.refine(torch.randn(1, L, 16))
    assert tuple(fmap.shape[-2:]) == grid


def test_gen_config_validation():
    with pytest.raises(ValueError):
        GenConfig(n_scales=0)
    with pytest.raises(ValueError):
        GenConfig(n_scales=5)
    with pytest.raises(ValueError):
        GenConfig(wiring="sideways")


@pytest.mark.parametrize("wiring", ["conventional", "paper-literal"])
def test_fuse_length(wiring):
    g = _gen(wiring=wiring)
    assert g.fuse(torch.randn(1, 5, 16), torch.randn(1, 80, 16)).shape == (1, 5, 16)


def test_fuse_rejects_width_mismatch():
    with pytest.raises(ValueError):
        _gen().fuse(torch.randn(1, 5, 16), torch.randn(1, 80, 8))


def test_fuse_zero_cross_projection_ignores_style():
    g = _gen()
    with torch.no_grad():
        for blk in g.fusion:
            blk.cross_attn.out_proj.weight.zero_()
            blk.cross_attn.out_proj.bias.zero_()
    content = torch.randn(1, 4, 16)
    assert torch.equal(g.fuse(content, torch.randn(1, 10, 16)), g.fuse(content, torch.randn(1, 30, 16)))


@pytest.mark.parametrize("L", [1, 20])
def test_decoder_geometry(table, L):
    g = _gen()
    w = WriterIdentifier(BLOCK, 2)
    batch = generate(StyleSet(0, [_img(48)]), ["a" * L], g, w, table)
    img = batch.images[0]
    assert img.shape == (1, 32, 16 * L)
    assert img.abs().max() <= 1.0


def test_generate_widths_and_determinism(table):
    g = _gen()
    w = WriterIdentifier(BLOCK, 2)
    style = StyleSet(0, [_img(48)])
    a = generate(style, ["hi", "thương"], g, w, table)
    b = generate(style, ["hi", "thương"], g, w, table)
    assert [im.shape[-1] for im in a.images] == [32, 96]
    assert all(torch.equal(x, y) for x, y in zip(a.images, b.images))
    assert a.writer_id == 0


@pytest.mark.parametrize("flag", [{"n_scales": 1}, {"use_cpe": False}])
def test_ablation_flags_change_output(table, flag):
    w = WriterIdentifier(BLOCK, 2)
    style = StyleSet(0, [_img(48)])
    base = generate(style, ["ab"], _gen(), w, table).images[0]
    ablated = generate(style, ["ab"], _gen(**flag), w, table).images[0]
    assert ablated.shape == base.shape
    assert not torch.equal(base, ablated)


def test_cpe_removal_changes_outputs_same_weights(table):
    g = _gen()
    w = WriterIdentifier(BLOCK, 2)
    style = StyleSet(0, [_img(48)])
    with torch.no_grad():
        for cpe in g.cpe:
            cpe.proj.weight.mul_(10)
    before = generate(style, ["ab"], g, w, table).images[0]
    g.cpe = None
    assert not torch.equal(before, generate(style, ["ab"], g, w, table).images[0])


@pytest.mark.parametrize("seed", range(5))
def test_generate_end_to_end_gradient(table, seed):
    torch.manual_seed(seed)
    g = Generator(GenConfig(block=BLOCK, decoder_channels=(8, 4))).double()
    style = torch.randn(1, 12, 16, dtype=torch.float64)
    content = render_text(table, "ab", 16)
    params = dict(g.named_parameters())
    rng = np.random.default_rng(seed)
    for name in ("content_proj.weight", "fusion.0.cross_attn.q_proj.weight", "scales.1.0.ffn.fc1.weight", "decoder.to_image.weight"):
        p = params[name]

        def f(value, name=name):
            return torch.func.functional_call(g, {name: value}, (style, content)).sum()

        idx = rng.choice(p.numel(), size=min(6, p.numel()), replace=False)
        assert finite_diff_check(f, p.detach(), eps=1e-4, indices=idx) < 1e-3, name
    assert finite_diff_check(lambda s: g(s, content).sum(), style, indices=range(0, 192, 17)) < 1e-3


# ---------------------------------------------------------------- discriminator


@pytest.mark.parametrize("w,n", [(128, 16), (80, 10), (16, 2)])
def test_discriminator_score_count(w, n):
    d = Discriminator(8)
    assert d(_img(w)).shape == (1, n)


def test_discriminator_zero_head():
    d = Discriminator(8)
    with torch.no_grad():
        d.score.weight.zero_()
    assert torch.all(d(_img(64)) == 0)
    with pytest.raises(ValueError):
        d(torch.zeros(1, 1, 16, 64))


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 20))
def test_discriminator_score_law(k):
    assert Discriminator(4)(_img(16 * k)).shape[1] == 2 * k


@pytest.mark.parametrize("seed", range(5))
def test_discriminator_gradient(seed):
    torch.manual_seed(seed)
    d = Discriminator(4).double()
    x = torch.rand(1, 1, 32, 32, dtype=torch.float64) * 2 - 1
    idx = np.random.default_rng(seed).choice(x.numel(), 24, replace=False)
    assert finite_diff_check(lambda t: d(t).sum(), x, indices=idx) < 1e-3


def test_hinge_losses():
    t = torch.tensor
    assert float(d_hinge_loss(t([1.0, 2.0]), t([-1.0, -3.0]))) == 0
    assert float(d_hinge_loss(t([0.0]), t([0.0]))) == 2.0
    assert float(d_hinge_loss(t([0.5]), t([-0.25]))) == pytest.approx(1.25)
    assert float(g_hinge_loss(t([1.0, -1.0]))) == 0
    assert float(g_hinge_loss(t([2.0]))) == -2
    fake = t([0.3, -0.2, 1.5, 0.0], requires_grad=True)
    g_hinge_loss(fake).backward()
    torch.testing.assert_close(fake.grad, torch.full((4,), -0.25))


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=1, max_size=6),
    st.lists(st.floats(-5, 5), min_size=1, max_size=6),
)
def test_d_hinge_nonnegative_and_zero_iff_margins(real, fake):
    loss = float(d_hinge_loss(torch.tensor(real, dtype=torch.float64), torch.tensor(fake, dtype=torch.float64)))
    assert loss >= 0
    assert (loss == 0) == (min(real) >= 1 and max(fake) <= -1)


# ---------------------------------------------------------------- recognizer


def test_recognizer_timesteps():
    r = Recognizer(BLOCK, Charset(tuple("ab")), widths=(4, 8))
    assert r(_img(128)).shape == (1, 32, 3)
    assert r(_img(16)).shape == (1, 4, 3)
    assert torch.isfinite(r(_img(64))).all()
    with pytest.raises(ValueError):
        r(torch.zeros(1, 1, 30, 64))


@settings(max_examples=15, deadline=None)
@given(st.integers(4, 300))
def test_recognizer_timestep_law(w):
    r = Recognizer(BLOCK, Charset(tuple("ab")), widths=(4, 8))
    assert r(_img(w)).shape[1] == w // 4


def test_crnn_variant_shape():
    r = Recognizer(BLOCK, Charset(tuple("abc")), use_vit=False, widths=(4, 8))
    assert r(_img(64)).shape == (1, 16, 4)


def test_greedy_decode_rules():
    cs = Charset(("a", "b"))

    def onehot(path):
        return torch.nn.functional.one_hot(torch.tensor(path), 3).float()

    assert greedy_decode(onehot([0, 1, 1, 0, 2]), cs) == "ab"
    assert greedy_decode(onehot([0, 0, 0]), cs) == ""
    assert greedy_decode(onehot([1, 0, 1]), cs) == "aa"


def test_charset_from_texts_and_errors():
    cs = Charset.from_texts(["cat", "thế"])
    assert cs.symbols == tuple(sorted(set("catthế")))
    assert cs.decode(cs.encode("thế")) == "thế"
    with pytest.raises(KeyError):
        cs.encode("z")
    with pytest.raises(ValueError):
        Charset(("a", "a"))
