import itertools
import math

import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from hwgen.nnblocks import finite_diff_check
from hwgen.recognizer import Charset, ctc_min_length, recognition_loss
from oracles import ctc_brute_force

ALPHABET = "abc"


def all_instances():
    for T in range(1, 5):
        for n_sym in range(1, 4):
            symbols = ALPHABET[:n_sym]
            for length in range(0, 3):
                for y in itertools.product(symbols, repeat=length):
                    yield T, symbols, "".join(y)


def test_exhaustive_against_path_enumeration():
    gen = torch.Generator().manual_seed(0)
    checked = 0
    for T, symbols, y in all_instances():
        cs = Charset(tuple(symbols))
        labels = cs.encode(y)
        if ctc_min_length(labels) > T:
            continue
        logits = torch.randn(T, cs.n_classes, generator=gen, dtype=torch.float64)
        probs = logits.softmax(-1).tolist()
        expected = ctc_brute_force(probs, labels)
        got = float(recognition_loss(logits, y, cs))
        assert got == pytest.approx(expected, abs=1e-6), (T, symbols, y)
        checked += 1
    assert checked == 72  # every valid (T, charset, y) with T<=4, |charset|<=3, |y|<=2


def test_certain_path_has_zero_loss():
    cs = Charset(("a",))
    logits = torch.tensor([[-50.0, 50.0]], dtype=torch.float64)
    assert float(recognition_loss(logits, "a", cs)) == pytest.approx(0.0, abs=1e-12)


def test_uniform_two_steps():
    cs = Charset(("a",))
    loss = float(recognition_loss(torch.zeros(2, 2, dtype=torch.float64), "a", cs))
    assert loss == pytest.approx(-math.log(0.75), abs=1e-12)
    assert loss == pytest.approx(0.2877, abs=1e-4)


def test_matches_torch_ctc():
    torch.manual_seed(3)
    cs = Charset(tuple("abcd"))
    for y, T in [("abba", 9), ("cab", 6), ("d", 1), ("aa", 3)]:
        logits = torch.randn(T, 5, dtype=torch.float64)
        ref = F.ctc_loss(
            logits.log_softmax(-1)[:, None], torch.tensor([cs.encode(y)]), torch.tensor([T]), torch.tensor([len(y)]), reduction="sum"
        )
        assert float(recognition_loss(logits, y, cs)) == pytest.approx(float(ref), abs=1e-9)


def test_errors():
    cs = Charset(("a", "b"))
    with pytest.raises(ValueError):
        recognition_loss(torch.zeros(2, 3), "aa", cs)  # needs 3 steps
    with pytest.raises(KeyError):
        recognition_loss(torch.zeros(4, 3), "z", cs)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.text(alphabet="ab", max_size=4), st.integers(0, 2**16))
def test_loss_nonnegative(T, y, seed):
    cs = Charset(("a", "b"))
    if ctc_min_length(cs.encode(y)) > T:
        return
    logits = torch.randn(T, 3, generator=torch.Generator().manual_seed(seed), dtype=torch.float64) * 3
    assert float(recognition_loss(logits, y, cs)) >= 0


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    cs = Charset(tuple("abc"))
    logits = torch.randn(6, 4, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    assert finite_diff_check(lambda x: recognition_loss(x, "cab", cs), logits) < 1e-3
