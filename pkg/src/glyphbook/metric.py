"""Glyph costs and distances, and the cached distance oracle over a glyph set.

All quantities are held as integers in *units*; a unit is worth
``CostModel.unit_scale`` bits (a rational). For the default ink-Hamming mode
one unit is one pixel and ``unit_scale == kappa``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import sparse

from .bitmap import Glyph

INK_HAMMING = "ink_hamming"
ASYMMETRIC = "asymmetric_surrogate"


def _frac(x) -> Fraction:
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**9)
    return Fraction(x)


@dataclass(frozen=True)
class CostModel:
    """How many bits a pattern costs and how far a glyph is from a pattern.

    In ``asymmetric_surrogate`` mode the distance from glyph u to pattern v
    weighs u's unmatched ink by ``alpha`` and v's by ``beta``; it is not a
    metric unless ``alpha == beta``.
    """

    kappa: Fraction = Fraction(1)
    mode: str = INK_HAMMING
    alpha: Fraction = Fraction(1)
    beta: Fraction = Fraction(1)

    def __post_init__(self):
        for name in ("kappa", "alpha", "beta"):
            object.__setattr__(self, name, _frac(getattr(self, name)))
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.mode not in (INK_HAMMING, ASYMMETRIC):
            raise ValueError(f"unknown distance mode {self.mode!r}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")

    @property
    def _weights(self) -> tuple[Fraction, Fraction]:
        if self.mode == INK_HAMMING:
            return Fraction(1), Fraction(1)
        return self.alpha, self.beta

    @property
    def _denominator(self) -> int:
        a, b = self._weights
        return math.lcm(a.denominator, b.denominator)

    @property
    def unit_scale(self) -> Fraction:
        return self.kappa / self._denominator

    @property
    def ink_units(self) -> int:
        """Units per ink pixel of pattern cost."""
        return self._denominator

    @property
    def weight_units(self) -> tuple[int, int]:
        a, b = self._weights
        L = self._denominator
        return int(a * L), int(b * L)

    @property
    def is_metric(self) -> bool:
        return self.mode == INK_HAMMING or self.alpha == self.beta

    def to_bits(self, units) -> Fraction:
        return self.unit_scale * int(units)


def glyph_cost(g: Glyph, model: CostModel = CostModel()) -> Fraction:
    return model.kappa * g.ink_count


def glyph_distance(u: Glyph, v: Glyph, model: CostModel = CostModel()) -> Fraction:
    """Bits to code glyph ``u`` given pattern ``v``, via anchor-aligned ink sets."""
    iu, iv = u.ink_set(), v.ink_set()
    a, b = model._weights
    return model.kappa * (a * len(iu - iv) + b * len(iv - iu))


def cross_distances(rows: Sequence[Glyph], cols: Sequence[Glyph],
                    model: CostModel = CostModel()) -> np.ndarray:
    """Integer unit distances d(row, col) for every pair, as an int64 matrix.

    Ink sets are indexed in one frame shared by both lists, so overlap counts
    come out of a single sparse product.
    """
    if not rows or not cols:
        return np.zeros((len(rows), len(cols)), dtype=np.int64)
    offs_r = [g.offsets() for g in rows]
    offs_c = [g.offsets() for g in cols]
    allo = np.concatenate(offs_r + offs_c)
    lo = allo.min(axis=0)
    span_x = int(allo[:, 0].max() - lo[0] + 1)
    span_y = int(allo[:, 1].max() - lo[1] + 1)
    nfeat = span_x * span_y

    def incidence(offs):
        idx = np.concatenate([(o[:, 1] - lo[1]) * span_x + (o[:, 0] - lo[0]) for o in offs])
        ptr = np.concatenate([[0], np.cumsum([len(o) for o in offs])])
        data = np.ones(len(idx), dtype=np.int64)
        return sparse.csr_matrix((data, idx, ptr), shape=(len(offs), nfeat))

    A, B = incidence(offs_r), incidence(offs_c)
    inter = np.asarray((A @ B.T).todense(), dtype=np.int64)
    nr = np.array([len(o) for o in offs_r], dtype=np.int64)[:, None]
    nc = np.array([len(o) for o in offs_c], dtype=np.int64)[None, :]
    wa, wb = model.weight_units
    return wa * (nr - inter) + wb * (nc - inter)


@dataclass(eq=False)
class DistanceOracle:
    """Vertex costs c(v) and directed distances d(u, v) over a glyph list.

    ``units[u, v]`` is the distance from glyph ``u`` to glyph ``v`` used as a
    pattern. Entries flagged in ``pruned`` hold a certified lower bound that is
    at least ``costs[u]``, so ``min(units[u, v], costs[u])`` is always exact;
    :meth:`d_units` recomputes such entries on demand.
    """

    glyphs: list
    model: CostModel
    costs: np.ndarray
    units: np.ndarray
    pruned: np.ndarray
    _exact: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.costs)

    @property
    def unit_scale(self) -> Fraction:
        return self.model.unit_scale

    def d_units(self, u: int, v: int) -> int:
        if not self.pruned[u, v]:
            return int(self.units[u, v])
        key = (u, v)
        if key not in self._exact:
            self._exact[key] = int(cross_distances([self.glyphs[u]], [self.glyphs[v]], self.model)[0, 0])
        return self._exact[key]

    def d(self, u: int, v: int) -> Fraction:
        return self.unit_scale * self.d_units(u, v)

    def c(self, v: int) -> Fraction:
        return self.unit_scale * int(self.costs[v])

    def exact_column(self, v: int) -> np.ndarray:
        col = self.units[:, v].copy()
        for u in np.nonzero(self.pruned[:, v])[0]:
            col[u] = self.d_units(int(u), v)
        return col

    def exact_units(self) -> np.ndarray:
        if not self.pruned.any():
            return self.units
        return np.stack([self.exact_column(v) for v in range(self.n)], axis=1)

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n,
            "kappa": str(self.model.kappa),
            "mode": self.model.mode,
            "alpha": str(self.model.alpha),
            "beta": str(self.model.beta),
            "unit_scale": str(self.unit_scale),
            "costs": self.costs.tolist(),
            "distances": self.exact_units().tolist(),
        })

    @classmethod
    def from_json(cls, text: str, glyphs=None) -> "DistanceOracle":
        doc = json.loads(text)
        model = CostModel(Fraction(doc["kappa"]), doc["mode"], Fraction(doc["alpha"]),
                          Fraction(doc["beta"]))
        units = np.array(doc["distances"], dtype=np.int64).reshape(doc["n"], doc["n"])
        return cls(list(glyphs) if glyphs is not None else [], model,
                   np.array(doc["costs"], dtype=np.int64), units,
                   np.zeros_like(units, dtype=bool))

    @classmethod
    def from_matrix(cls, costs, distances, model: CostModel = CostModel()) -> "DistanceOracle":
        """Oracle over an abstract weighted graph (no glyphs behind it)."""
        units = np.array(distances, dtype=np.int64)
        return cls([], model, np.array(costs, dtype=np.int64), units,
                   np.zeros_like(units, dtype=bool))


def build_distance_oracle(glyphs: Sequence[Glyph], model: CostModel = CostModel(),
                          prefilter_slack=math.inf, block: int = 256) -> DistanceOracle:
    """Materialize costs and all pairwise distances for ``glyphs``.

    With a finite ``prefilter_slack`` (bits), pair (u, v) is skipped when the
    ink-count lower bound on d(u, v) already reaches c(u) + slack; the stored
    value is then that lower bound, flagged as pruned.
    """
    glyphs = list(glyphs)
    if not glyphs:
        raise ValueError("need at least one glyph")
    n = len(glyphs)
    ink = np.array([g.ink_count for g in glyphs], dtype=np.int64)
    costs = ink * model.ink_units
    wa, wb = model.weight_units
    lower = min(wa, wb) * np.abs(ink[:, None] - ink[None, :])

    if math.isinf(prefilter_slack):
        prune = np.zeros((n, n), dtype=bool)
    else:
        slack_units = math.ceil(_frac(prefilter_slack) / model.unit_scale)
        prune = lower >= costs[:, None] + slack_units
        np.fill_diagonal(prune, False)

    units = lower.copy()
    for r0 in range(0, n, block):
        rows = slice(r0, min(n, r0 + block))
        need = ~prune[rows].all(axis=0)
        cols = np.nonzero(need)[0]
        if len(cols) == 0:
            continue
        block_d = cross_distances(glyphs[rows], [glyphs[c] for c in cols], model)
        sub = units[rows]
        keep = ~prune[rows][:, cols]
        sub_cols = sub[:, cols]
        sub_cols[keep] = block_d[keep]
        sub[:, cols] = sub_cols
    return DistanceOracle(glyphs, model, costs, units, prune)


# --- property verification -------------------------------------------------

@dataclass
class PropertyCheck:
    name: str
    checked: int = 0
    violations: int = 0
    counterexample: tuple | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def record(self, bad: np.ndarray, index_tuples):
        self.checked += int(bad.size)
        nbad = int(bad.sum())
        if nbad and self.counterexample is None:
            first = np.argwhere(bad)[0]
            self.counterexample = tuple(int(i) for i in index_tuples(first))
        self.violations += nbad

    def as_dict(self) -> dict:
        return {"name": self.name, "checked": self.checked, "violations": self.violations,
                "passed": self.passed, "counterexample": self.counterexample}


@dataclass
class MetricReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> PropertyCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.as_dict() for c in self.checks]}


def verify_metric_properties(oracle: DistanceOracle, sample_triples: int | None = 1000,
                             seed: int = 0) -> MetricReport:
    """Check symmetry, identity, triangle inequality and c(v) <= c(u) + d(u, v).

    ``sample_triples=None`` checks every pair and triple exhaustively.
    Counterexamples are index tuples: (u, v) for pair properties, (u, v, w)
    for the triangle inequality d(u, w) <= d(u, v) + d(v, w).
    """
    if oracle.pruned.any():
        raise ValueError("metric verification needs an oracle built without pruning")
    D, c, n = oracle.units, oracle.costs, oracle.n
    identity = PropertyCheck("identity")
    symmetry = PropertyCheck("symmetry")
    triangle = PropertyCheck("triangle_inequality")
    lipschitz = PropertyCheck("cost_lipschitz")

    diag = np.diagonal(D)
    identity.record(diag != 0, lambda i: (i[0], i[0]))

    if sample_triples is None:
        symmetry.record(D != D.T, lambda i: i)
        lipschitz.record(c[None, :] > c[:, None] + D, lambda i: i)
        for v in range(n):
            bad = D > D[:, v][:, None] + D[v, :][None, :]
            triangle.record(bad, lambda i, v=v: (i[0], v, i[1]))
    else:
        rng = np.random.default_rng(seed)
        u, v, w = rng.integers(0, n, size=(3, sample_triples))
        symmetry.record(D[u, v] != D[v, u], lambda i: (u[i[0]], v[i[0]]))
        lipschitz.record(c[v] > c[u] + D[u, v], lambda i: (u[i[0]], v[i[0]]))
        triangle.record(D[u, w] > D[u, v] + D[v, w], lambda i: (u[i[0]], v[i[0]], w[i[0]]))
    return MetricReport([identity, symmetry, triangle, lipschitz])



def random_instance(n: int, seed: int, model: CostModel = CostModel()) -> DistanceOracle:
    """Oracle over ``n`` glyphs from a small seeded synthetic page.

    Shape count, shape area and noise level are drawn from the seed so a run
    over many seeds covers duplicates, near-duplicates and unrelated shapes.
    """
    from .bitmap import CorpusSpec, extract_glyphs, generate_corpus

    rng = np.random.default_rng(seed)
    shapes = int(min(n, rng.integers(1, 5)))
    area = int(rng.integers(3, 16))
    noise = float(rng.choice([0.0, 0.05, 0.1, 0.2, 0.3]))
    side = 24 * (int(math.isqrt(n)) + 2)
    spec = CorpusSpec(shapes, n, noise, 0, side, side, int(rng.integers(2**32)), area)
    page, _, _ = generate_corpus(spec)
    return build_distance_oracle(extract_glyphs(page), model)
