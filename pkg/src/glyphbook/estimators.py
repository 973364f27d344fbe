"""Scikit-learn style codebook estimators.

Each estimator clusters glyphs into pattern classes. ``fit`` takes a sequence
of :class:`~glyphbook.bitmap.Glyph` (or a page :class:`Bitmap`, which is
segmented first) and sets ``labels_``, ``patterns_`` and ``objective_bits_``.
``predict`` maps new glyphs to their nearest pattern, ``transform`` returns
distances in bits to every pattern.
"""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import kmedian
from .bitmap import Bitmap, Glyph, boundary_length, extract_glyphs, pattern_glyph
from .metric import build_distance_oracle, cross_distances
from .validation import (check_connectivity, check_cost_model, check_glyphs,
                         check_min_decrease, check_threshold)


def default_threshold(glyphs, noise: float, kappa=1) -> Fraction:
    """kappa * (noise * mean boundary length * 4), never below one pixel's worth."""
    if not glyphs:
        return Fraction(kappa)
    mean_boundary = Fraction(sum(boundary_length(g.bitmap) for g in glyphs), len(glyphs))
    noise = Fraction(noise).limit_denominator(10**6)
    return Fraction(kappa) * max(Fraction(1), noise * mean_boundary * 4)


class _CodebookEstimator(ClusterMixin, TransformerMixin, BaseEstimator):
    """Shared fit/predict plumbing; subclasses implement ``_partition``."""

    def _model(self):
        return check_cost_model(self.kappa, self.distance, self.alpha, self.beta)

    def fit(self, X, y=None):
        glyphs = check_glyphs(X, check_connectivity(self.connectivity))
        self.model_ = self._model()
        self.oracle_ = build_distance_oracle(glyphs, self.model_, self.prefilter_slack)
        self.partition_ = self._partition(self.oracle_)
        self.labels_ = self.partition_.labels(len(glyphs))
        self.patterns_ = [r if isinstance(r, Bitmap) else glyphs[r].bitmap
                          for r in self.partition_.representatives]
        self.n_patterns_ = len(self.patterns_)
        self.objective_units_ = kmedian.partition_objective_units(self.partition_, self.oracle_)
        self.objective_bits_ = self.model_.to_bits(self.objective_units_)
        return self

    @property
    def glyphs_(self):
        return self.oracle_.glyphs

    def transform(self, X):
        check_is_fitted(self, "patterns_")
        glyphs = check_glyphs(X, check_connectivity(self.connectivity), allow_empty=True)
        D = cross_distances(glyphs, [pattern_glyph(p) for p in self.patterns_], self.model_)
        return D * float(self.model_.unit_scale)

    def predict(self, X):
        check_is_fitted(self, "patterns_")
        glyphs = check_glyphs(X, check_connectivity(self.connectivity), allow_empty=True)
        if not glyphs:
            return np.zeros(0, dtype=np.int64)
        D = cross_distances(glyphs, [pattern_glyph(p) for p in self.patterns_], self.model_)
        return D.argmin(axis=1)


class FirstFit(_CodebookEstimator):
    """Order-sensitive single pass; a glyph joins the first class whose first member is within threshold."""

    def __init__(self, threshold_bits=1, kappa=1, connectivity=8, distance="ink_hamming",
                 alpha=1, beta=1, prefilter_slack=math.inf):
        self.threshold_bits = threshold_bits
        self.kappa = kappa
        self.connectivity = connectivity
        self.distance = distance
        self.alpha = alpha
        self.beta = beta
        self.prefilter_slack = prefilter_slack

    def _partition(self, oracle):
        return kmedian.first_fit_oracle(oracle, check_threshold(self.threshold_bits))


class FirstFitKMeans(_CodebookEstimator):
    """First-Fit followed by multi-pass modified k-means refinement."""

    def __init__(self, threshold_bits=1, kmeans_mode="first_match", min_decrease=1, kappa=1,
                 connectivity=8, distance="ink_hamming", alpha=1, beta=1,
                 prefilter_slack=math.inf):
        self.threshold_bits = threshold_bits
        self.kmeans_mode = kmeans_mode
        self.min_decrease = min_decrease
        self.kappa = kappa
        self.connectivity = connectivity
        self.distance = distance
        self.alpha = alpha
        self.beta = beta
        self.prefilter_slack = prefilter_slack

    def _partition(self, oracle):
        T = check_threshold(self.threshold_bits)
        start = kmedian.first_fit_oracle(oracle, T)
        self.initial_n_patterns_ = start.n_classes
        part, self.kmeans_counts_ = kmedian.modified_k_means(
            start, oracle, self.kmeans_mode, T, check_min_decrease(self.min_decrease))
        return part


class GreedyKMedian(_CodebookEstimator):
    """Greedy fixed-cost k-median codebook (GKM); needs no match threshold."""

    def __init__(self, kappa=1, connectivity=8, distance="ink_hamming", alpha=1, beta=1,
                 prefilter_slack=math.inf):
        self.kappa = kappa
        self.connectivity = connectivity
        self.distance = distance
        self.alpha = alpha
        self.beta = beta
        self.prefilter_slack = prefilter_slack

    def _partition(self, oracle):
        self.solution_ = kmedian.greedy_k_median(oracle)
        return self.solution_.to_partition()


class GKMWithKMeans(_CodebookEstimator):
    """GKM whose picks may be swapped for their class centroid while the rate improves."""

    def __init__(self, epsilon=0, kappa=1, connectivity=8, distance="ink_hamming", alpha=1,
                 beta=1, prefilter_slack=math.inf):
        self.epsilon = epsilon
        self.kappa = kappa
        self.connectivity = connectivity
        self.distance = distance
        self.alpha = alpha
        self.beta = beta
        self.prefilter_slack = prefilter_slack

    def _partition(self, oracle):
        self.solution_ = kmedian.gkm_with_k_means(oracle, self.epsilon)
        return self.solution_.to_partition()


class GKMThenKMeans(_CodebookEstimator):
    """GKM classes post-processed by modified k-means (closest pattern, no threshold by default)."""

    def __init__(self, threshold_bits=math.inf, kmeans_mode="best_match", min_decrease=1, kappa=1,
                 connectivity=8, distance="ink_hamming", alpha=1, beta=1,
                 prefilter_slack=math.inf):
        self.threshold_bits = threshold_bits
        self.kmeans_mode = kmeans_mode
        self.min_decrease = min_decrease
        self.kappa = kappa
        self.connectivity = connectivity
        self.distance = distance
        self.alpha = alpha
        self.beta = beta
        self.prefilter_slack = prefilter_slack

    def _partition(self, oracle):
        self.solution_ = kmedian.greedy_k_median(oracle)
        start = self.solution_.to_partition()
        self.initial_n_patterns_ = start.n_classes
        part, self.kmeans_counts_ = kmedian.modified_k_means(
            start, oracle, self.kmeans_mode, check_threshold(self.threshold_bits),
            check_min_decrease(self.min_decrease))
        return part


ALGORITHMS = {
    "first_fit": FirstFit,
    "ff_kmeans": FirstFitKMeans,
    "gkm": GreedyKMedian,
    "gkm_kmeans": GKMWithKMeans,
    "gkm_then_kmeans": GKMThenKMeans,
}


def make_estimator(name: str, **params):
    """Build the named estimator, passing only the parameters it accepts."""
    try:
        cls = ALGORITHMS[name]
    except KeyError:
        raise ValueError(f"unknown algorithm {name!r}; choose from {sorted(ALGORITHMS)}")
    accepted = cls().get_params()
    return cls(**{k: v for k, v in params.items() if k in accepted})


__all__ = ["FirstFit", "FirstFitKMeans", "GreedyKMedian", "GKMWithKMeans", "GKMThenKMeans",
           "ALGORITHMS", "make_estimator", "default_threshold", "extract_glyphs", "Glyph"]
