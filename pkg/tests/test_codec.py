import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glyphbook import kmedian
from glyphbook.bitmap import Bitmap, Glyph, extract_glyphs
from glyphbook.codec import (LOSSLESS, LOSSY, Codebook, all_residuals, apply_residual,
                             compute_residual, estimate_sizes, materialize_codebook,
                             reconstruct, zeroth_order_bits)
from glyphbook.estimators import ALGORITHMS, make_estimator
from glyphbook.metric import CostModel, build_distance_oracle, glyph_distance

from conftest import corpus_glyphs, glyphs


def h0_bits(symbols):
    """Float oracle for ceil(n * H0)."""
    n = len(symbols)
    h = -sum(c / n * math.log2(c / n) for c in Counter(symbols).values())
    return math.ceil(n * h - 1e-9)


# --- materialize -----------------------------------------------------------------

def test_empty_solution_self_codes_everything():
    gs = [Glyph(Bitmap([[1]]), 0, 0), Glyph(Bitmap([[1, 1]]), 3, 0), Glyph(Bitmap([[1], [1]]), 6, 0)]
    sol = kmedian.Solution((), [None] * 3, Fraction(1), 0, 5, None, [])
    cb = materialize_codebook(sol, gs, 10, 10)
    assert cb.n_patterns == 3 and cb.assignment == [0, 1, 2]


def test_single_center_one_pattern():
    _, gs, _ = corpus_glyphs(shapes=1, count=10, noise=0.0)
    sol = kmedian.greedy_k_median(build_distance_oracle(gs))
    assert len(sol.chosen) == 1 and sol.self_coded == []
    assert materialize_codebook(sol, gs, 600, 600).n_patterns == 1


def test_identical_self_coded_glyphs_dedup():
    gs = [Glyph(Bitmap([[1, 1]]), 0, 0), Glyph(Bitmap([[1, 1]]), 5, 5)]
    sol = kmedian.Solution((), [None, None], Fraction(1), 0, 4, None, [])
    cb = materialize_codebook(sol, gs, 10, 10)
    assert cb.n_patterns == 1 and cb.assignment == [0, 0]


def test_codebook_rejects_unused_pattern():
    with pytest.raises(ValueError):
        Codebook([Bitmap([[1]]), Bitmap([[1, 1]])], [1, 2], [0], [(0, 0)], 4, 4)


# --- sizes ----------------------------------------------------------------------

@pytest.mark.parametrize("symbols", [[0, 0, 0, 1], [0] * 7, [0, 1], [0, 1, 2, 2, 2, 3, 3],
                                     list(range(10)) + [0] * 5])
def test_index_bits_match_float_oracle(symbols):
    assert zeroth_order_bits(symbols) == h0_bits(symbols)


def test_index_bits_example():
    assert zeroth_order_bits([0, 0, 0, 1]) == 4
    assert zeroth_order_bits([3] * 9) == 0
    assert zeroth_order_bits([]) == 0


def _pipeline(gs, page, algo="gkm"):
    est = make_estimator(algo, threshold_bits=2).fit(gs)
    return materialize_codebook(est.partition_, gs, page.width, page.height, est.model_)


def test_size_parts_sum(noisy_corpus):
    page, gs, _ = noisy_corpus
    cb = _pipeline(gs, page)
    lossy = estimate_sizes(cb, gs, page, LOSSY)
    lossless = estimate_sizes(cb, gs, page, LOSSLESS)
    assert lossy.residual_bits == 0
    assert lossy.total_lossy_bits == lossy.codebook_bits + lossy.index_bits + lossy.position_bits
    assert lossless.total_lossless_bits == lossless.total_lossy_bits + lossless.residual_bits
    assert lossless.total_lossless_bits >= lossy.total_lossy_bits
    assert lossy.codebook_bits == sum(p.ink_count for p in cb.patterns)
    assert lossy.position_bits == len(gs) * 2 * 10  # 600 -> 10 bits per axis
    assert lossy.original_bits == 600 * 600
    for v in lossless.to_dict().values():
        assert v is None or isinstance(v, (int, float))


def test_residual_bits_by_hand():
    page = Bitmap.from_points(8, 4, [(0, 0), (1, 0), (2, 0), (5, 0)])
    gs = extract_glyphs(page)
    cb = Codebook([Bitmap([[1, 1, 1]])], [3], [0, 0], [(1, 0), (5, 0)], 8, 4)
    rep = estimate_sizes(cb, gs, page, LOSSLESS)
    # glyph 0: empty residual over a 3-pixel union, width ceil(log2 4) = 2
    # glyph 1: 2 residual pixels over the same union, 2 + 2*2
    assert rep.residual_bits == 2 + 6
    assert rep.index_bits == 0
    assert rep.position_bits == 2 * (3 + 2)


def test_fractional_kappa_codebook_bits_integer():
    _, gs, _ = corpus_glyphs(count=20)
    page = Bitmap.blank(600, 600)
    est = make_estimator("gkm", kappa=Fraction(1, 3)).fit(gs)
    cb = materialize_codebook(est.partition_, gs, 600, 600, est.model_)
    rep = estimate_sizes(cb, gs, page)
    assert rep.codebook_bits == math.ceil(Fraction(sum(p.ink_count for p in cb.patterns), 3))


# --- residuals ------------------------------------------------------------------

def test_residual_identity():
    g = Glyph(Bitmap([[1, 0], [1, 1]]))
    assert len(compute_residual(g, g.bitmap)) == 0


def test_residual_full_square_vs_dot():
    r = compute_residual(Glyph(Bitmap([[1]])), Bitmap([[1, 1], [1, 1]]))
    assert len(r) == 3


def test_residual_rejects_blank_pattern():
    with pytest.raises(ValueError):
        compute_residual(Glyph(Bitmap([[1]])), Bitmap([[0]]))


@settings(max_examples=60)
@given(glyphs(), glyphs())
def test_residual_matches_distance_and_inverts(g, p):
    r = compute_residual(g, p.bitmap)
    assert len(r) == glyph_distance(g, p)
    assert len(r) * Fraction(5, 2) == glyph_distance(g, p, CostModel(Fraction(5, 2)))
    assert apply_residual(p.bitmap, r) == g.ink_set()


# --- reconstruction -------------------------------------------------------------

@pytest.mark.parametrize("algo", sorted(ALGORITHMS))
@pytest.mark.parametrize("seed", range(3))
def test_lossless_round_trip(algo, seed):
    page, gs, _ = corpus_glyphs(shapes=6, count=60, noise=0.15, seed=seed, jitter=2)
    cb = _pipeline(gs, page, algo)
    assert reconstruct(cb, LOSSLESS, all_residuals(cb, gs)) == page


@pytest.mark.parametrize("algo", sorted(ALGORITHMS))
def test_lossy_exact_when_noiseless(algo):
    page, gs, _ = corpus_glyphs(noise=0.0, count=40, jitter=0)
    cb = _pipeline(gs, page, algo)
    assert cb.n_patterns == 5
    assert reconstruct(cb, LOSSY) == page


def test_lossy_two_pixel_difference():
    page = Bitmap(np.pad(np.ones((3, 3), dtype=bool), 2))
    (g,) = extract_glyphs(page)
    pattern = Bitmap([[0, 1, 0], [1, 1, 1], [1, 1, 1]])
    cb = Codebook([pattern], [7], [0], [(3, 3)], page.width, page.height)
    out = reconstruct(cb, LOSSY)
    assert int((out.pixels ^ page.pixels).sum()) == 2
    assert reconstruct(cb, LOSSLESS, all_residuals(cb, [g])) == page


def test_missing_residual_names_glyph():
    page, gs, _ = corpus_glyphs(count=10)
    cb = _pipeline(gs, page)
    res = all_residuals(cb, gs)
    res[4] = None
    with pytest.raises(ValueError, match="glyph 4"):
        reconstruct(cb, LOSSLESS, res)


def test_overlapping_stamps_or():
    cb = Codebook([Bitmap([[1, 1, 1]])], [3], [0, 0], [(1, 0), (2, 0)], 4, 1)
    assert reconstruct(cb, LOSSY) == Bitmap([[1, 1, 1, 1]])


def test_strip_layout():
    cb = Codebook([Bitmap([[1]]), Bitmap([[1], [1]])], [1, 2], [0, 1], [(0, 0), (3, 0)], 5, 5)
    assert cb.strip() == Bitmap([[0, 0, 1], [1, 0, 1]])
    assert cb.to_dict()["patterns"][1]["anchor"] == [0, 1]
