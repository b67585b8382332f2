import itertools

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, seed, settings
from hypothesis import strategies as st

from instances import build, c2_example
from wrflow import (
    BudgetExceededError,
    EmptyWordError,
    InvalidWordError,
    TreeCache,
    branch_telescoping_defect,
    child_dissipations,
    format_word,
    node_dissipation,
    node_residual,
    parse_word,
)


@pytest.fixture
def c2_cache():
    root, fam, _ = c2_example()
    return TreeCache(fam, root)


def test_root_is_r0(c2_cache):
    np.testing.assert_array_equal(node_residual(c2_cache, ()).matrix, np.eye(2))


@pytest.mark.parametrize(
    "word, expect",
    [((1,), np.diag([0.0, 1.0])), ((1, 2), np.zeros((2, 2))), ((2,), np.diag([1.0, 0.0]))],
)
def test_c2_residuals(c2_cache, word, expect):
    np.testing.assert_allclose(node_residual(c2_cache, word).matrix, expect, atol=1e-15)


@pytest.mark.parametrize(
    "word, expect",
    [((1,), np.diag([1.0, 0.0])), ((1, 1), np.zeros((2, 2))), ((1, 2), np.diag([0.0, 1.0]))],
)
def test_c2_dissipations(c2_cache, word, expect):
    np.testing.assert_allclose(node_dissipation(c2_cache, word).matrix, expect, atol=1e-15)


def test_dissipation_of_empty_word(c2_cache):
    with pytest.raises(EmptyWordError):
        node_dissipation(c2_cache, ())


def test_dissipation_below_zero_residual_is_zero(c2_cache):
    for j in (1, 2):
        assert not np.any(node_dissipation(c2_cache, (1, 2, j)).matrix)


def test_child_dissipations_at_root(c2_cache):
    kids = child_dissipations(c2_cache, ())
    np.testing.assert_allclose(kids[0].matrix, np.diag([1.0, 0.0]))
    np.testing.assert_allclose(kids[1].matrix, np.diag([0.0, 1.0]))


def test_child_dissipations_at_zero_node(c2_cache):
    assert all(not np.any(d.matrix) for d in child_dissipations(c2_cache, (1, 2)))


def test_telescoping_examples(c2_cache):
    assert branch_telescoping_defect(c2_cache, ()) == 0.0
    assert branch_telescoping_defect(c2_cache, (1, 2)) <= 1e-12


def test_random_depth_30_telescoping():
    rng = np.random.default_rng(30)
    root, fam, cache = build(rng, 8, 3)
    word = tuple(int(j) for j in rng.integers(1, 4, size=30))
    assert branch_telescoping_defect(cache, word) <= 1e-8 * np.linalg.norm(root.matrix)


def test_residual_matches_recursive_oracle():
    # oracle: scipy sqrtm applied along the word
    rng = np.random.default_rng(5)
    root, fam, cache = build(rng, 5, 2, split=False)
    r = root.matrix.copy()
    word = (2, 1, 1, 2)
    for j in word:
        s = scipy.linalg.sqrtm(r)
        r = s @ (np.eye(5) - fam.projection(j)) @ s
        r = 0.5 * (r + r.conj().T)
    np.testing.assert_allclose(node_residual(cache, word).matrix, r, atol=1e-9)


def test_binary_cross_identity():
    rng = np.random.default_rng(6)
    root, fam, cache = build(rng, 6, 2)
    for w in [(), (1,), (2, 1), (1, 1, 2)]:
        a = node_residual(cache, w + (1,)).matrix
        b = child_dissipations(cache, w)[1].matrix
        assert np.linalg.norm(a - b) <= 1e-12 * np.linalg.norm(root.matrix)


def test_splitting_decomposition():
    rng = np.random.default_rng(7)
    root, fam, cache = build(rng, 6, 3)
    for w in [(), (3,), (1, 2), (2, 2, 1)]:
        total = sum(d.matrix for d in child_dissipations(cache, w))
        assert np.linalg.norm(node_residual(cache, w).matrix - total) <= 1e-8 * np.linalg.norm(root.matrix)


def test_memoization_transparent():
    rng = np.random.default_rng(8)
    root, fam, path = build(rng, 4, 3)
    full = TreeCache(fam, root, mode="exhaustive")
    fresh_each = [TreeCache(fam, root) for _ in range(3)]
    words = [(1, 2, 3), (1, 2), (3, 3, 1, 2), (1, 2, 3)]
    for k, w in enumerate(words):
        a = node_residual(path, w).matrix
        b = node_residual(full, w).matrix
        c = node_residual(fresh_each[k % 3], w).matrix
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, c)


def test_path_mode_keeps_only_ancestors():
    rng = np.random.default_rng(9)
    _, _, cache = build(rng, 3, 2)
    node_residual(cache, (1, 1, 1))
    node_residual(cache, (2, 2))
    assert len(cache) == 3


def test_budget_exceeded():
    rng = np.random.default_rng(10)
    root, fam, _ = build(rng, 3, 2)
    cache = TreeCache(fam, root, budget=3, mode="exhaustive")
    node_residual(cache, (1, 1))
    with pytest.raises(BudgetExceededError):
        node_residual(cache, (2, 2))
    with pytest.raises(BudgetExceededError):
        cache.check_budget(5)


def test_invalid_letters(c2_cache):
    with pytest.raises(InvalidWordError):
        node_residual(c2_cache, (3,))
    with pytest.raises(InvalidWordError):
        node_residual(c2_cache, (0,))


@pytest.mark.parametrize("m, word, text", [(3, (1, 3, 2), "132"), (12, (10, 1, 12), "10,1,12"), (2, (), "")])
def test_word_format_round_trip(m, word, text):
    assert format_word(word, m) == text
    assert parse_word(text, m) == word


def test_parse_rejects_bad_words():
    with pytest.raises(InvalidWordError):
        parse_word("1x", 3)
    with pytest.raises(InvalidWordError):
        parse_word("14", 3)


@seed(21)
@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(2, 3), st.booleans(), st.integers(0, 2**32 - 1))
def test_chain_monotone_and_loewner_sandwich(d, m, split, s):
    rng = np.random.default_rng(s)
    root, fam, cache = build(rng, d, m, split=split)
    scale = np.linalg.norm(root.matrix, 2)
    for w in itertools.product(range(1, m + 1), repeat=3):
        for k in range(3):
            parent = node_residual(cache, w[:k]).matrix
            child = node_residual(cache, w[: k + 1]).matrix
            diss = node_dissipation(cache, w[: k + 1]).matrix
            assert np.linalg.eigvalsh(parent - child)[0] >= -1e-10 * scale
            assert np.linalg.eigvalsh(diss)[0] >= -1e-10 * scale
            assert np.linalg.eigvalsh(parent - diss)[0] >= -1e-10 * scale
            assert np.linalg.eigvalsh(root.matrix - child)[0] >= -1e-10 * scale
