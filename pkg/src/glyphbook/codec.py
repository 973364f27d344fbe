"""Codebooks, compressed-size estimates and page reconstruction.

Sizes are closed-form estimates standing in for real entropy coders: patterns
cost kappa bits per ink pixel, indices their zeroth-order entropy, positions a
fixed width, and lossless residuals a count plus one pixel index each.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Sequence

import numpy as np

from .bitmap import Bitmap, Glyph, centroid_anchor
from .kmedian import Partition, Solution
from .metric import CostModel

LOSSY = "lossy"
LOSSLESS = "lossless"


@dataclass
class Codebook:
    """Patterns plus, per glyph, a pattern index and the page point its anchor lands on."""

    patterns: list
    pattern_cost_bits: list
    assignment: list
    positions: list
    page_width: int
    page_height: int

    def __post_init__(self):
        used = set(self.assignment)
        if any(not 0 <= a < len(self.patterns) for a in self.assignment):
            raise ValueError("assignment index out of range")
        if used != set(range(len(self.patterns))):
            raise ValueError("every pattern must be referenced by at least one glyph")

    @property
    def n_patterns(self) -> int:
        return len(self.patterns)

    def anchors(self) -> list[tuple[int, int]]:
        return [centroid_anchor(p) for p in self.patterns]

    def to_dict(self) -> dict:
        return {
            "page_width": self.page_width,
            "page_height": self.page_height,
            "patterns": [{"width": p.width, "height": p.height,
                          "anchor": list(a), "cost_bits": _num(c)}
                         for p, a, c in zip(self.patterns, self.anchors(), self.pattern_cost_bits)],
            "assignment": list(self.assignment),
            "positions": [list(p) for p in self.positions],
        }

    def strip(self, gap: int = 1) -> Bitmap:
        """All patterns side by side, bottom-aligned, ``gap`` blank columns apart."""
        if not self.patterns:
            return Bitmap.blank(0, 0)
        h = max(p.height for p in self.patterns)
        w = sum(p.width for p in self.patterns) + gap * (len(self.patterns) - 1)
        canvas = np.zeros((h, w), dtype=bool)
        x = 0
        for p in self.patterns:
            canvas[h - p.height:, x: x + p.width] = p.pixels
            x += p.width + gap
        return Bitmap(canvas)


def _num(x: Fraction):
    return int(x) if x.denominator == 1 else float(x)


def _glyph_anchor_point(g: Glyph) -> tuple[int, int]:
    return g.page_x + g.anchor_dx, g.page_y + g.anchor_dy


def materialize_codebook(result, glyphs: Sequence[Glyph], page_width: int, page_height: int,
                         model: CostModel = CostModel()) -> Codebook:
    """Codebook from a :class:`Solution` or :class:`Partition` over ``glyphs``.

    Self-coded glyphs become their own patterns; bit-identical patterns are
    merged and unreferenced ones dropped.
    """
    if isinstance(result, Solution):
        if len(result.assignment) != len(glyphs):
            raise ValueError("solution does not match the glyph list")
        raw = []
        for v, a in enumerate(result.assignment):
            if a is None:
                raw.append(glyphs[v].bitmap)
            elif a in result.virtual:
                raw.append(result.virtual[a])
            else:
                raw.append(glyphs[a].bitmap)
    elif isinstance(result, Partition):
        raw = [None] * len(glyphs)
        for members, rep in zip(result.classes, result.representatives):
            bm = rep if isinstance(rep, Bitmap) else glyphs[rep].bitmap
            for i in members:
                raw[i] = bm
        if any(r is None for r in raw):
            raise ValueError("partition does not cover every glyph")
    else:
        raise TypeError(f"cannot build a codebook from {type(result).__name__}")

    index: dict = {}
    patterns: list[Bitmap] = []
    assignment = []
    for bm in raw:
        bm = bm.crop()
        if bm not in index:
            index[bm] = len(patterns)
            patterns.append(bm)
        assignment.append(index[bm])
    costs = [model.kappa * p.ink_count for p in patterns]
    positions = [_glyph_anchor_point(g) for g in glyphs]
    return Codebook(patterns, costs, assignment, positions, page_width, page_height)


# --- residuals ---------------------------------------------------------------

@dataclass(frozen=True)
class Residual:
    """Anchor-relative pixels where a glyph and its aligned pattern differ."""

    pixels: tuple
    union_area: int

    def __len__(self):
        return len(self.pixels)


def _pattern_offsets(pattern: Bitmap) -> set:
    ax, ay = centroid_anchor(pattern)
    ys, xs = np.nonzero(pattern.pixels)
    return set(zip((xs - ax).tolist(), (ys - ay).tolist()))


def compute_residual(glyph: Glyph, pattern: Bitmap) -> Residual:
    if pattern.ink_count == 0:
        raise ValueError("pattern must contain ink")
    g = glyph.ink_set()
    p = _pattern_offsets(pattern)
    pts = g | p
    xs = [q[0] for q in pts]
    ys = [q[1] for q in pts]
    area = (max(xs) - min(xs) + 1) * (max(ys) - min(ys) + 1)
    return Residual(tuple(sorted(g ^ p)), area)


def apply_residual(pattern: Bitmap, residual: Residual) -> set:
    return _pattern_offsets(pattern) ^ set(residual.pixels)


# --- size estimates ----------------------------------------------------------

@dataclass
class SizeReport:
    codebook_bits: int
    index_bits: int
    position_bits: int
    residual_bits: int
    total_lossy_bits: int
    total_lossless_bits: int
    original_bits: int
    lossy_ratio: float | None
    lossless_ratio: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def _ceil_log2(x: int) -> int:
    return (x - 1).bit_length() if x > 1 else 0


def zeroth_order_bits(symbols: Sequence[int]) -> int:
    """ceil(n * H0) of a symbol stream, computed to 50 digits before rounding up."""
    n = len(symbols)
    counts = Counter(symbols)
    if n == 0 or len(counts) == 1:
        return 0
    with localcontext() as ctx:
        ctx.prec = 50
        ln2 = Decimal(2).ln()
        total = Decimal(n) * Decimal(n).ln()
        for c in counts.values():
            total -= Decimal(c) * Decimal(c).ln()
        bits = total / ln2
        nearest = bits.to_integral_value()
        if abs(bits - nearest) < Decimal("1e-30"):
            return int(nearest)
        return int(bits.to_integral_value(rounding="ROUND_CEILING"))


def estimate_sizes(codebook: Codebook, glyphs: Sequence[Glyph], page: Bitmap,
                   mode: str = LOSSY) -> SizeReport:
    n = len(glyphs)
    if len(codebook.assignment) != n:
        raise ValueError("codebook does not match the glyph list")
    codebook_bits = math.ceil(sum(codebook.pattern_cost_bits, Fraction(0)))
    index_bits = zeroth_order_bits(codebook.assignment)
    position_bits = n * (_ceil_log2(page.width) + _ceil_log2(page.height))
    residual_bits = 0
    if mode == LOSSLESS:
        for g, a in zip(glyphs, codebook.assignment):
            r = compute_residual(g, codebook.patterns[a])
            width = _ceil_log2(r.union_area + 1)
            residual_bits += width + len(r) * width
    elif mode != LOSSY:
        raise ValueError(f"unknown mode {mode!r}")
    lossy = codebook_bits + index_bits + position_bits
    lossless = lossy + residual_bits if mode == LOSSLESS else lossy
    original = page.width * page.height
    return SizeReport(
        codebook_bits, index_bits, position_bits, residual_bits, lossy, lossless, original,
        original / lossy if lossy else None,
        original / lossless if lossless else None,
    )


# --- reconstruction ----------------------------------------------------------

def _stamp(canvas: np.ndarray, offsets, point):
    px, py = point
    h, w = canvas.shape
    for dx, dy in offsets:
        x, y = px + dx, py + dy
        if 0 <= x < w and 0 <= y < h:
            canvas[y, x] = True


def reconstruct(codebook: Codebook, mode: str = LOSSY, residuals=None) -> Bitmap:
    """Paint every glyph's pattern at its anchor point; lossless mode applies residuals first."""
    canvas = np.zeros((codebook.page_height, codebook.page_width), dtype=bool)
    if mode == LOSSLESS and residuals is None:
        raise ValueError("lossless reconstruction needs residuals (missing for glyph 0)")
    pattern_offsets = [_pattern_offsets(p) for p in codebook.patterns]
    for i, (a, point) in enumerate(zip(codebook.assignment, codebook.positions)):
        if mode == LOSSLESS:
            if i >= len(residuals) or residuals[i] is None:
                raise ValueError(f"missing residual for glyph {i}")
            offs = pattern_offsets[a] ^ set(residuals[i].pixels)
        else:
            offs = pattern_offsets[a]
        _stamp(canvas, offs, point)
    return Bitmap(canvas)


def all_residuals(codebook: Codebook, glyphs: Sequence[Glyph]) -> list[Residual]:
    return [compute_residual(g, codebook.patterns[a]) for g, a in zip(glyphs, codebook.assignment)]
