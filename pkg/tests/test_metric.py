import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glyphbook.bitmap import Bitmap, Glyph
from glyphbook.metric import (ASYMMETRIC, CostModel, DistanceOracle, build_distance_oracle,
                              cross_distances, glyph_cost, glyph_distance, random_instance,
                              verify_metric_properties)

from conftest import corpus_glyphs, glyphs


def _glyph(rows):
    return Glyph(Bitmap(rows))


def test_cost_examples():
    assert glyph_cost(_glyph([[1]])) == 1
    g37 = Glyph(Bitmap(np.ones((1, 37), dtype=bool)))
    assert glyph_cost(g37) == 37
    g10 = Glyph(Bitmap(np.ones((2, 5), dtype=bool)))
    assert glyph_cost(g10, CostModel(Fraction(3, 2))) == 15


def test_distance_examples():
    u, v = _glyph([[1]]), _glyph([[1, 1]])
    assert glyph_distance(u, u) == 0
    # anchors (0,0) and (1,0): one pixel of v is unmatched
    assert glyph_distance(u, v) == 1
    ring = _glyph([[1, 1, 1], [1, 0, 1], [1, 1, 1]])
    dot = _glyph([[1]])
    assert glyph_distance(ring, dot) == 8 + 1


def test_kappa_must_be_positive():
    with pytest.raises(ValueError):
        CostModel(0)


@settings(max_examples=40)
@given(st.lists(glyphs(), min_size=1, max_size=6), st.lists(glyphs(), min_size=1, max_size=6),
       st.sampled_from([CostModel(), CostModel(Fraction(3, 2)),
                        CostModel(1, ASYMMETRIC, Fraction(1, 2), Fraction(2, 3))]))
def test_cross_distances_match_set_route(rows, cols, model):
    D = cross_distances(rows, cols, model)
    for i, u in enumerate(rows):
        for j, v in enumerate(cols):
            assert model.to_bits(D[i, j]) == glyph_distance(u, v, model)


def test_single_glyph_oracle():
    o = build_distance_oracle([_glyph([[1, 1]])])
    assert o.n == 1 and o.d(0, 0) == 0 and o.c(0) == 2


def test_oracle_without_pruning_is_transparent():
    _, gs, _ = corpus_glyphs(count=30)
    o = build_distance_oracle(gs, prefilter_slack=math.inf)
    assert not o.pruned.any()
    for u in range(0, 30, 3):
        for v in range(30):
            assert o.d(u, v) == glyph_distance(gs[u], gs[v])
        assert o.c(u) == glyph_cost(gs[u])


def test_prefilter_bound_arithmetic():
    small = Glyph(Bitmap(np.ones((1, 5), dtype=bool)))
    big = Glyph(Bitmap(np.ones((20, 25), dtype=bool)))
    o = build_distance_oracle([small, big], prefilter_slack=0)
    # lower bound 495 >= c(small) = 5: the small glyph's row may skip the pair
    assert o.pruned[0, 1]
    assert o.units[0, 1] == 495
    # the big glyph's row still needs the exact value, 495 < c(big) = 500
    assert not o.pruned[1, 0]
    assert o.d(0, 1) == glyph_distance(small, big)


def test_pruned_oracle_capped_terms_exact():
    _, gs, _ = corpus_glyphs(shapes=8, count=80, noise=0.1, area=25)
    tiny = [Glyph(Bitmap([[1]])), Glyph(Bitmap([[1, 1]]))]
    gs = gs + tiny
    full = build_distance_oracle(gs)
    pruned = build_distance_oracle(gs, prefilter_slack=0)
    assert pruned.pruned.any()
    capped_full = np.minimum(full.units, full.costs[:, None])
    capped_pruned = np.minimum(pruned.units, pruned.costs[:, None])
    assert np.array_equal(capped_full, capped_pruned)
    assert np.array_equal(pruned.exact_units(), full.units)
    assert (pruned.units[pruned.pruned] <= full.units[pruned.pruned]).all()


def test_verify_identical_glyphs():
    g = _glyph([[1, 1], [1, 0]])
    report = verify_metric_properties(build_distance_oracle([g] * 5), None)
    assert report.passed


@pytest.mark.parametrize("seed", range(5))
def test_verify_ink_hamming_corpus(seed):
    _, gs, _ = corpus_glyphs(count=40, seed=seed, noise=0.2)
    o = build_distance_oracle(gs)
    assert verify_metric_properties(o, None).passed
    assert verify_metric_properties(o, 5000, seed=seed).passed


def test_verify_asymmetric_symmetry_counterexample():
    a, b = _glyph([[1, 1]]), _glyph([[1], [1], [1]])
    o = build_distance_oracle([a, b], CostModel(1, ASYMMETRIC, 2, 0))
    report = verify_metric_properties(o, None)
    sym = report["symmetry"]
    assert not sym.passed
    u, v = sym.counterexample
    assert o.d(u, v) != o.d(v, u)


def test_verify_rejects_pruned_oracle():
    small = Glyph(Bitmap([[1]]))
    big = Glyph(Bitmap(np.ones((4, 4), dtype=bool)))
    with pytest.raises(ValueError):
        verify_metric_properties(build_distance_oracle([small, big], prefilter_slack=0))


def test_kappa_scales_everything():
    _, gs, _ = corpus_glyphs(count=20)
    a = build_distance_oracle(gs)
    b = build_distance_oracle(gs, CostModel(Fraction(5, 2)))
    for u in range(20):
        assert b.c(u) == Fraction(5, 2) * a.c(u)
        for v in range(20):
            assert b.d(u, v) == Fraction(5, 2) * a.d(u, v)


def test_json_round_trip():
    o = random_instance(7, 3, CostModel(Fraction(3, 2)))
    back = DistanceOracle.from_json(o.to_json())
    assert back.model == o.model
    assert np.array_equal(back.units, o.units) and np.array_equal(back.costs, o.costs)


@settings(max_examples=25, deadline=None)
@given(st.lists(glyphs(max_side=5), min_size=2, max_size=10))
def test_metric_properties_hold_for_arbitrary_glyphs(gs):
    assert verify_metric_properties(build_distance_oracle(gs), None).passed
