import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hwgen.dataio import POOL_NAMES, Sample, SplitSpec, build_eval_grid
from hwgen.metrics import (
    FeatureSet,
    cer,
    default_feature_extractor,
    edit_distance,
    eval_four_way,
    fid,
    kid,
    kid_estimates,
    mmd2_unbiased,
    ned,
    wer,
)
from oracles import levenshtein, mmd2_expanded


def test_fid_identity_and_symmetry():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(300, 5)), rng.normal(1.0, 2.0, size=(200, 5))
    assert fid(a, a) <= 1e-6
    assert fid(a, b) == pytest.approx(fid(b, a), abs=1e-8)
    perm_a, perm_b = rng.permutation(300), rng.permutation(200)
    assert fid(a[perm_a], b[perm_b]) == pytest.approx(fid(a, b), abs=1e-8)


def test_fid_matches_closed_form_on_fitted_moments():
    # Frechet distance computed from the sample moments with scipy's sqrtm
    from scipy import linalg

    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(400, 3)), rng.normal(size=(400, 3)) @ np.diag([1.0, 2.0, 0.5]) + 0.3
    ca, cb = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    ref = np.sum((a.mean(0) - b.mean(0)) ** 2) + np.trace(ca + cb - 2 * linalg.sqrtm(ca @ cb).real)
    assert fid(a, b) == pytest.approx(ref, abs=1e-8)


def test_fid_errors():
    with pytest.raises(ValueError):
        fid(np.zeros((1, 3)), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        fid(np.full((3, 2), np.nan), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        fid(np.zeros((3, 2)), np.zeros((3, 4)))


def test_kid_hand_case_matches_expansion():
    x = np.array([[0.5], [-1.0]])
    y = np.array([[2.0], [0.25]])
    assert mmd2_unbiased(x, y) == pytest.approx(mmd2_expanded(x.tolist(), y.tolist(), 1), abs=1e-9)


def test_kid_deterministic_under_seed():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(300, 4)), rng.normal(size=(300, 4))
    assert kid(a, b, 50, 5, seed=3) == kid(a, b, 50, 5, seed=3)


def test_kid_identical_set_uses_disjoint_subsets():
    a = np.random.default_rng(0).normal(size=(1000, 4))
    est = kid_estimates(a, a, subset_size=100, n_subsets=20, seed=0)
    se = est.std(ddof=1) / np.sqrt(len(est))
    assert abs(est.mean()) <= 3 * se
    with pytest.raises(ValueError):
        kid_estimates(a[:150], a[:150], subset_size=100)


def test_edit_distance_spot_values():
    assert edit_distance("abc", "abc") == edit_distance("abc", "abc")
    c = edit_distance("abc", "abc")
    assert (c.substitutions, c.insertions, c.deletions, c.rate) == (0, 0, 0, 0.0)
    assert edit_distance("kitten", "sitting").cost == 3
    e = edit_distance("", "ab")
    assert (e.deletions, e.cost, e.rate) == (2, 2, 1.0)
    i = edit_distance("abx", "ab")
    assert i.insertions == 1 and i.cost == 1


def test_edit_distance_exhaustive_against_recursion():
    strings = ["".join(p) for n in range(0, 7) for p in itertools.product("abc", repeat=n)]
    rng = np.random.default_rng(0)
    short = [s for s in strings if len(s) <= 3]
    # all pairs up to length 3, plus a large random sample of longer pairs
    pairs = list(itertools.product(short, short))
    pairs += [(strings[i], strings[j]) for i, j in rng.integers(0, len(strings), size=(4000, 2))]
    for a, b in pairs:
        assert edit_distance(a, b).cost == levenshtein(a, b), (a, b)


def test_rates_spot_values():
    assert cer([("abc", "abc")]) == wer([("abc", "abc")]) == ned([("abc", "abc")]) == 0
    assert cer([("ab", "ad")]) == pytest.approx(50.0)
    assert ned([("ab", "ad")]) == pytest.approx(50.0)
    assert wer([("ab", "ad")]) == pytest.approx(100.0)
    assert ned([("", "hello")]) == pytest.approx(100.0)
    assert wer([("the cat  sat", "the\tcat sat")]) == 0
    with pytest.raises(ValueError):
        cer([("a", "")])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.text("abc ", max_size=8), st.text("abc", min_size=1, max_size=8)), min_size=1, max_size=5))
def test_rates_scale_free(pairs):
    doubled = pairs + pairs
    assert cer(doubled) == pytest.approx(cer(pairs))
    assert ned(doubled) == pytest.approx(ned(pairs))
    if any(r.split() for _, r in pairs):
        assert wer(doubled) == pytest.approx(wer(pairs))


def test_feature_extractor_contract():
    imgs = torch.rand(6, 1, 32, 128) * 2 - 1
    a = default_feature_extractor(imgs, seed=0)
    b = default_feature_extractor(imgs, seed=0)
    assert isinstance(a, FeatureSet)
    assert a.features.shape == (6, 256)
    np.testing.assert_array_equal(a.features, b.features)
    assert len({tuple(row) for row in a.features.round(12)}) == 6
    with pytest.raises(ValueError):
        default_feature_extractor(torch.rand(2, 1, 32, 100))


def _pools():
    split = SplitSpec({0}, {1}, {"aa", "bb"})
    samples = [Sample(f"s{i}", w, wid) for i, (w, wid) in enumerate(itertools.product(["aa", "bb", "cc", "dd"], [0, 1]))]
    samples = samples * 3
    images = {id(s): torch.rand(1, 32, 32 + 16 * (i % 5), generator=torch.Generator().manual_seed(i)) * 2 - 1 for i, s in enumerate(samples)}
    keyed = {}
    for i, s in enumerate(samples):
        keyed[(s.image_path, i)] = images[id(s)]
    real = {}
    for i, s in enumerate(samples):
        real.setdefault(s.image_path, images[id(s)])
    return build_eval_grid(split, samples), real


def test_four_way_identity_copier_scores_zero():
    pools, real = _pools()

    def load_real(s):
        return real[s.image_path]

    def copier(wanted):
        return [real[s.image_path] for s in wanted]

    n = len(pools["IV-S"])
    table = eval_four_way(pools, copier, load_real, n_per_pool=n)
    assert list(table) == list(POOL_NAMES)
    for name in POOL_NAMES:
        assert table[name] == pytest.approx(0.0, abs=1e-6)


def test_four_way_errors_and_absent_cells():
    pools, real = _pools()
    with pytest.raises(ValueError):
        eval_four_way(pools, lambda w: [], lambda s: None, n_per_pool=0)
    pools["OOV-U"] = []
    table = eval_four_way(pools, lambda w: [real[s.image_path] for s in w], lambda s: real[s.image_path], 6)
    assert table["OOV-U"] is None and len(table) == 4
