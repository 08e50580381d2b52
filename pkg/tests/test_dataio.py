import json
import logging

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hwgen import images
from hwgen.dataio import (
    Dataset,
    ManifestError,
    Sample,
    SplitSpec,
    build_eval_grid,
    load_manifest,
    load_split,
    pad_or_truncate_eval,
    preprocess_image,
    sample_style_set,
    select_style_indices,
    write_split,
)


def _write(path, lines):
    path.write_text("\n".join(json.dumps(l) for l in lines) + "\n", encoding="utf-8")
    return path


def test_manifest_writer_ids_first_appearance(tmp_path):
    p = _write(
        tmp_path / "m.jsonl",
        [{"image": "a.pgm", "text": "x", "writer": w} for w in ["w2", "w1", "w2"]],
    )
    samples, writers = load_manifest(p)
    assert [s.writer_id for s in samples] == [0, 1, 0]
    assert writers == ["w2", "w1"]
    assert samples[0].image_path == str(tmp_path / "a.pgm")


def test_manifest_keeps_duplicates(tmp_path):
    rec = {"image": "a.pgm", "text": "x", "writer": "w"}
    samples, _ = load_manifest(_write(tmp_path / "m.jsonl", [rec, rec]))
    assert len(samples) == 2


def test_manifest_errors(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "e.jsonl")
    p = _write(tmp_path / "m.jsonl", [{"image": "a", "text": "x", "writer": "w"}, {"image": "b", "writer": "w"}])
    with pytest.raises(ManifestError, match=r":2: missing field 'text'"):
        load_manifest(p)


def test_preprocess_geometry_and_range():
    raw = np.random.default_rng(0).uniform(0, 255, size=(64, 160))
    out = preprocess_image(raw, 5)
    assert out.shape == (1, 32, 80)
    assert out.min() >= -1 and out.max() <= 1


def test_preprocess_white_is_plus_one():
    out = preprocess_image(np.full((50, 70), 255.0), 3)
    assert torch.all(out == 1.0)


def test_preprocess_identity_at_target_size():
    raw = np.random.default_rng(1).integers(0, 256, size=(32, 48)).astype(float)
    out = preprocess_image(raw, 3, dtype=torch.float64)
    np.testing.assert_allclose(out[0].numpy(), raw / 127.5 - 1.0, atol=1e-12)


def test_preprocess_bilinear_half_pixel_centres():
    # 32 x 8 -> 32 x 16: dst column j samples src at (j + 0.5) / 2 - 0.5
    raw = np.tile(np.arange(8, dtype=float) * 30.0, (32, 1))
    out = preprocess_image(raw, 1, dtype=torch.float64)[0, 0].numpy()
    src = np.clip((np.arange(16) + 0.5) * 0.5 - 0.5, 0, 7)
    expected = np.interp(src, np.arange(8), raw[0]) / 127.5 - 1.0
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_preprocess_rejects_empty():
    with pytest.raises(ValueError):
        preprocess_image(np.zeros((0, 10)), 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 90), st.integers(1, 300), st.integers(1, 20))
def test_preprocess_width_law(h, w, L):
    out = preprocess_image(np.full((h, w), 128.0), L)
    assert out.shape == (1, 32, 16 * L)
    assert out.abs().max() <= 1.0


def test_pad_or_truncate():
    img = torch.rand(1, 32, 100) * 2 - 1
    out = pad_or_truncate_eval(img)
    assert out.shape[-1] == 128
    assert torch.all(out[..., 100:] == 1.0)
    torch.testing.assert_close(out[..., :100], img, rtol=0, atol=0)
    same = torch.rand(1, 32, 128)
    assert pad_or_truncate_eval(same) is same
    wide = torch.rand(1, 32, 200)
    torch.testing.assert_close(pad_or_truncate_eval(wide), wide[..., :128], rtol=0, atol=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 300))
def test_pad_or_truncate_idempotent(w):
    img = torch.rand(1, 32, w) * 2 - 1
    once = pad_or_truncate_eval(img)
    assert torch.equal(pad_or_truncate_eval(once), once)


def _samples(counts):
    out = []
    for wid, n in enumerate(counts):
        out += [Sample(f"{wid}_{i}.pgm", f"w{i}", wid) for i in range(n)]
    return out


def test_style_indices_without_replacement():
    samples = _samples([20, 3])
    picks = select_style_indices(samples, 0, 15, rng_seed=7)
    assert len(picks) == 15 and len(set(picks)) == 15
    assert all(samples[i].writer_id == 0 for i in picks)
    assert picks == select_style_indices(samples, 0, 15, rng_seed=7)


def test_style_indices_with_replacement_and_single():
    samples = _samples([1, 3])
    assert select_style_indices(samples, 0, 1, 0) == [0]
    picks = select_style_indices(samples, 1, 15, 0)
    assert len(picks) == 15 and set(picks) <= {1, 2, 3}
    with pytest.raises(KeyError):
        select_style_indices(samples, 5, 1, 0)


def test_sample_style_set_loads_images(tmp_path):
    recs = []
    for i in range(3):
        images.write_pgm(tmp_path / f"{i}.pgm", np.full((32, 32), 40 * i, dtype=np.uint8))
        recs.append({"image": f"{i}.pgm", "text": "ab", "writer": "w"})
    ds = Dataset.from_manifest(_write(tmp_path / "m.jsonl", recs))
    style = sample_style_set(ds, 0, 2, 0)
    assert style.size == 2
    assert all(img.shape == (1, 32, 32) for img in style.images)


def test_eval_grid_partition(caplog):
    split = SplitSpec({0}, {1}, {"the", "cat"})
    samples = [Sample("a", "the", 0), Sample("b", "The", 1), Sample("c", "cat", 1), Sample("d", "dog", 0)]
    with caplog.at_level(logging.WARNING):
        pools = build_eval_grid(split, samples)
    assert pools["IV-S"] == [samples[0]]
    assert pools["OOV-U"] == [samples[1]]  # case-sensitive vocabulary
    assert pools["IV-U"] == [samples[2]]
    assert pools["OOV-S"] == [samples[3]]
    assert sum(len(p) for p in pools.values()) == len(samples)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["a", "b", "c", "d"]), st.integers(0, 3)), min_size=1, max_size=30))
def test_eval_grid_is_a_partition(pairs):
    split = SplitSpec({0, 1}, {2, 3}, {"a", "b"})
    samples = [Sample(str(i), w, wid) for i, (w, wid) in enumerate(pairs)]
    pools = build_eval_grid(split, samples)
    ids = [s.image_path for p in pools.values() for s in p]
    assert sorted(ids) == sorted(s.image_path for s in samples)


def test_split_round_trip(tmp_path):
    writers = ["alice", "bob", "carol"]
    split = SplitSpec({0, 2}, {1}, {"hello", "thế"})
    write_split(tmp_path / "s.txt", split, writers)
    back = load_split(tmp_path / "s.txt", writers)
    assert back == split
    with pytest.raises(ValueError):
        SplitSpec({0}, {0}, set())


def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(32, 48)).astype(np.uint8)
    images.write_pgm(tmp_path / "x.pgm", img)
    np.testing.assert_array_equal(images.read_pgm(tmp_path / "x.pgm"), img)
    images.write_image(tmp_path / "x.png", img)
    np.testing.assert_array_equal(images.read_image(tmp_path / "x.png"), img)
