import numpy as np
import pytest
from hypothesis import strategies as st

from glyphbook.bitmap import Bitmap, CorpusSpec, Glyph, extract_glyphs, generate_corpus


@st.composite
def glyphs(draw, max_side=6):
    w = draw(st.integers(1, max_side))
    h = draw(st.integers(1, max_side))
    bits = draw(st.lists(st.booleans(), min_size=w * h, max_size=w * h))
    arr = np.array(bits, dtype=bool).reshape(h, w)
    if not arr.any():
        arr[0, 0] = True
    return Glyph(Bitmap(arr).crop())


def corpus_glyphs(shapes=5, count=60, noise=0.1, seed=0, jitter=1, area=20, side=600):
    page, truth, _ = generate_corpus(CorpusSpec(shapes, count, noise, jitter, side, side, seed, area))
    return page, extract_glyphs(page), truth


@pytest.fixture
def noisy_corpus():
    return corpus_glyphs()


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        mark = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{mark}] {number:>2}. {title}: {detail}")
