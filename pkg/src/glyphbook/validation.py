"""Input checks shared by the estimators and the command line."""
from __future__ import annotations

import math
from fractions import Fraction

from .bitmap import Bitmap, Glyph, extract_glyphs
from .metric import CostModel


def check_glyphs(X, connectivity: int = 8, allow_empty: bool = False) -> list[Glyph]:
    """Accept a glyph sequence or a page bitmap; return a list of glyphs."""
    if isinstance(X, Bitmap):
        glyphs = extract_glyphs(X, connectivity)
    else:
        try:
            glyphs = list(X)
        except TypeError:
            raise TypeError(f"expected a Bitmap or a sequence of Glyph, got {type(X).__name__}")
        bad = [i for i, g in enumerate(glyphs) if not isinstance(g, Glyph)]
        if bad:
            raise TypeError(f"element {bad[0]} is {type(glyphs[bad[0]]).__name__}, not Glyph")
    if not glyphs and not allow_empty:
        raise ValueError("found 0 glyphs; at least one is required")
    return glyphs


def check_threshold(T) -> Fraction | float:
    if T is None:
        raise ValueError("this algorithm needs a match threshold")
    if isinstance(T, float) and math.isinf(T):
        return T
    t = Fraction(T).limit_denominator(10**9) if isinstance(T, float) else Fraction(T)
    if t < 0:
        raise ValueError(f"threshold must be non-negative, got {T}")
    return t


def check_cost_model(kappa=1, mode: str = "ink_hamming", alpha=1, beta=1) -> CostModel:
    return CostModel(kappa, mode, alpha, beta)


def check_connectivity(connectivity) -> int:
    c = int(connectivity)
    if c not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    return c


def check_min_decrease(k):
    if isinstance(k, float) and math.isinf(k):
        return k
    if int(k) != k or k < 1:
        raise ValueError(f"min_decrease must be a positive integer or inf, got {k}")
    return int(k)
