"""Bitonal rasters: PBM I/O, glyph extraction, class centroids, synthetic pages.

Pixels are stored as read-only boolean numpy arrays indexed ``[y, x]`` with
``True`` meaning ink (PBM's 1 = black).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

FOUR = 4
EIGHT = 8

_MAX_PIXELS = 1 << 31


class PBMError(ValueError):
    """Malformed PBM input; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DegenerateCentroidError(ValueError):
    pass


class CapacityError(ValueError):
    pass


class Bitmap:
    """Immutable rectangular bitonal raster."""

    __slots__ = ("_pixels",)

    def __init__(self, pixels):
        arr = np.array(pixels, dtype=bool)
        if arr.size == 0:
            arr = arr.reshape(arr.shape if arr.ndim == 2 else (0, 0))
        if arr.ndim != 2:
            raise ValueError(f"bitmap must be 2-D, got shape {arr.shape}")
        arr.flags.writeable = False
        self._pixels = arr

    @classmethod
    def blank(cls, width: int, height: int) -> "Bitmap":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def from_points(cls, width: int, height: int, points: Iterable[tuple[int, int]]) -> "Bitmap":
        arr = np.zeros((height, width), dtype=bool)
        for x, y in points:
            arr[y, x] = True
        return cls(arr)

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    @property
    def ink_count(self) -> int:
        return int(self._pixels.sum())

    def ink_points(self) -> list[tuple[int, int]]:
        ys, xs = np.nonzero(self._pixels)
        return list(zip(xs.tolist(), ys.tolist()))

    def crop(self) -> "Bitmap":
        """Tight bounding box of the ink (0x0 when there is none)."""
        ys, xs = np.nonzero(self._pixels)
        if len(ys) == 0:
            return Bitmap.blank(0, 0)
        return Bitmap(self._pixels[ys.min(): ys.max() + 1, xs.min(): xs.max() + 1])

    def _key(self):
        return (self.width, self.height, np.packbits(self._pixels).tobytes())

    def __eq__(self, other):
        if not isinstance(other, Bitmap):
            return NotImplemented
        return self._pixels.shape == other._pixels.shape and bool(
            np.array_equal(self._pixels, other._pixels))

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return f"Bitmap({self.width}x{self.height}, ink={self.ink_count})"


def centroid_anchor(bitmap: Bitmap) -> tuple[int, int]:
    """Ink centroid rounded half-up per axis, in bitmap coordinates.

    Computed in integers: floor(sum/count + 1/2) == (2*sum + count) // (2*count).
    """
    ys, xs = np.nonzero(bitmap.pixels)
    count = len(xs)
    if count == 0:
        raise ValueError("anchor of an empty bitmap is undefined")
    sx, sy = int(xs.sum()), int(ys.sum())
    return (2 * sx + count) // (2 * count), (2 * sy + count) // (2 * count)


@dataclass(frozen=True, eq=False)
class Glyph:
    """A connected ink blob, positioned on its source page.

    ``bitmap`` is the tight bounding box; ``anchor_dx``/``anchor_dy`` locate
    the rounded ink centroid inside it. Patterns (synthesized centroids) are
    also represented as glyphs, positioned at the origin.
    """

    bitmap: Bitmap
    page_x: int = 0
    page_y: int = 0
    ink_count: int = field(init=False)
    anchor_dx: int = field(init=False)
    anchor_dy: int = field(init=False)

    def __post_init__(self):
        px = self.bitmap.pixels
        if px.size == 0 or not px.any():
            raise ValueError("glyph must contain at least one ink pixel")
        if not (px[0].any() and px[-1].any() and px[:, 0].any() and px[:, -1].any()):
            raise ValueError("glyph bitmap is not a tight bounding box")
        ax, ay = centroid_anchor(self.bitmap)
        object.__setattr__(self, "ink_count", int(px.sum()))
        object.__setattr__(self, "anchor_dx", ax)
        object.__setattr__(self, "anchor_dy", ay)

    @property
    def width(self) -> int:
        return self.bitmap.width

    @property
    def height(self) -> int:
        return self.bitmap.height

    def offsets(self) -> np.ndarray:
        """Ink coordinates relative to the anchor, as an (ink_count, 2) array of (dx, dy)."""
        ys, xs = np.nonzero(self.bitmap.pixels)
        return np.stack([xs - self.anchor_dx, ys - self.anchor_dy], axis=1)

    def ink_set(self) -> frozenset:
        return frozenset(map(tuple, self.offsets().tolist()))

    def __repr__(self):
        return (f"Glyph({self.width}x{self.height} at ({self.page_x},{self.page_y}), "
                f"ink={self.ink_count})")


def pattern_glyph(bitmap: Bitmap) -> Glyph:
    """Wrap a pattern bitmap as a glyph so it can take part in distance computations."""
    return Glyph(bitmap.crop())


# --- PBM -------------------------------------------------------------------

_WS = b" \t\r\n\v\f"


def _skip_ws_and_comments(raw: bytes, pos: int) -> int:
    while pos < len(raw):
        ch = raw[pos: pos + 1]
        if ch == b"#":
            nl = raw.find(b"\n", pos)
            pos = len(raw) if nl < 0 else nl + 1
        elif ch in _WS:
            pos += 1
        else:
            break
    return pos


def _read_int(raw: bytes, pos: int, what: str) -> tuple[int, int]:
    pos = _skip_ws_and_comments(raw, pos)
    m = re.compile(rb"[0-9]+").match(raw, pos)
    if m is None:
        raise PBMError(f"expected {what}", pos)
    if len(m.group()) > 10:
        raise PBMError(f"{what} too large", pos)
    return int(m.group()), m.end()


def parse_pbm(raw: bytes) -> Bitmap:
    """Parse a P1 (ASCII) or P4 (binary) PBM image."""
    if raw[:2] not in (b"P1", b"P4"):
        raise PBMError(f"bad magic number {raw[:2]!r}", 0)
    magic = raw[:2]
    width, pos = _read_int(raw, 2, "width")
    height, pos = _read_int(raw, pos, "height")
    if width * height >= _MAX_PIXELS:
        raise PBMError(f"dimensions {width}x{height} overflow", pos)

    if magic == b"P1":
        bits = []
        need = width * height
        while len(bits) < need:
            pos = _skip_ws_and_comments(raw, pos)
            if pos >= len(raw):
                raise PBMError(f"truncated raster: {len(bits)} of {need} pixels", pos)
            ch = raw[pos]
            if ch not in (0x30, 0x31):
                raise PBMError(f"unexpected byte {raw[pos:pos + 1]!r} in raster", pos)
            bits.append(ch == 0x31)
            pos += 1
        return Bitmap(np.array(bits, dtype=bool).reshape(height, width))

    if pos >= len(raw) or raw[pos:pos + 1] not in _WS:
        if width * height == 0 and pos >= len(raw):
            return Bitmap.blank(width, height)
        raise PBMError("expected whitespace before raster", pos)
    pos += 1
    row_bytes = (width + 7) // 8
    need = row_bytes * height
    if len(raw) - pos < need:
        raise PBMError(f"truncated raster: {len(raw) - pos} of {need} bytes", len(raw))
    packed = np.frombuffer(raw, dtype=np.uint8, count=need, offset=pos)
    bits = np.unpackbits(packed.reshape(height, row_bytes), axis=1)[:, :width]
    return Bitmap(bits.astype(bool))


def write_pbm(bitmap: Bitmap, format: str = "P4") -> bytes:
    w, h = bitmap.width, bitmap.height
    header = f"{format}\n{w} {h}\n".encode("ascii")
    if format == "P4":
        return header + np.packbits(bitmap.pixels, axis=1).tobytes()
    if format != "P1":
        raise ValueError(f"unknown PBM format {format!r}")
    lines = []
    for row in bitmap.pixels:
        digits = ["1" if b else "0" for b in row]
        # Netpbm asks for lines of at most 70 characters
        for i in range(0, len(digits), 35):
            lines.append(" ".join(digits[i:i + 35]))
    return header + "".join(line + "\n" for line in lines).encode("ascii")


def read_pbm(path) -> Bitmap:
    with open(path, "rb") as fh:
        return parse_pbm(fh.read())


def save_pbm(path, bitmap: Bitmap, format: str = "P4") -> None:
    with open(path, "wb") as fh:
        fh.write(write_pbm(bitmap, format))


# --- extraction ------------------------------------------------------------

def _structure(connectivity: int) -> np.ndarray:
    if connectivity == EIGHT:
        return np.ones((3, 3), dtype=bool)
    if connectivity == FOUR:
        return ndimage.generate_binary_structure(2, 1)
    raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")


def extract_glyphs(page: Bitmap, connectivity: int = EIGHT) -> list[Glyph]:
    """Connected ink components in reading order (bounding-box top, then left)."""
    if page.pixels.size == 0 or not page.pixels.any():
        return []
    labels, count = ndimage.label(page.pixels, structure=_structure(connectivity))
    glyphs = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = sl
        glyphs.append(Glyph(Bitmap(labels[sl] == idx), page_x=xs.start, page_y=ys.start))
    glyphs.sort(key=lambda g: (g.page_y, g.page_x))
    return glyphs


def paint_glyphs(glyphs: Sequence[Glyph], width: int, height: int) -> Bitmap:
    canvas = np.zeros((height, width), dtype=bool)
    for g in glyphs:
        canvas[g.page_y: g.page_y + g.height, g.page_x: g.page_x + g.width] |= g.bitmap.pixels
    return Bitmap(canvas)


# --- averaging -------------------------------------------------------------

def threshold_overlay(offset_sets: Sequence[np.ndarray]) -> Bitmap:
    """Majority vote over anchor-aligned ink offsets; ties (exactly half) keep ink."""
    if not offset_sets:
        raise ValueError("cannot average an empty class")
    allpts = np.concatenate([np.asarray(o).reshape(-1, 2) for o in offset_sets])
    if len(allpts) == 0:
        raise DegenerateCentroidError("class has no ink")
    x0, y0 = allpts.min(axis=0)
    x1, y1 = allpts.max(axis=0)
    votes = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=np.int64)
    for o in offset_sets:
        o = np.asarray(o).reshape(-1, 2)
        votes[o[:, 1] - y0, o[:, 0] - x0] += 1
    ink = 2 * votes >= len(offset_sets)
    if not ink.any():
        raise DegenerateCentroidError("every pixel fell below the threshold")
    return Bitmap(ink).crop()


def average_and_threshold(members: Sequence[Glyph]) -> Bitmap:
    """Anchor-aligned average of a class, thresholded at one half."""
    return threshold_overlay([g.offsets() for g in members])


# --- synthetic corpora -----------------------------------------------------

@dataclass(frozen=True)
class CorpusSpec:
    base_shape_count: int = 5
    glyph_instance_count: int = 100
    noise_flip_probability: float = 0.0
    jitter_max: int = 0
    page_width: int = 1024
    page_height: int = 1024
    seed: int = 0
    shape_area: int = 30

    def __post_init__(self):
        if self.base_shape_count < 1:
            raise ValueError("base_shape_count must be >= 1")
        if self.glyph_instance_count < self.base_shape_count:
            raise ValueError("glyph_instance_count must be >= base_shape_count")
        if not 0 <= self.noise_flip_probability <= 0.5:
            raise ValueError("noise_flip_probability must be in [0, 0.5]")
        if self.jitter_max < 0 or self.shape_area < 1:
            raise ValueError("jitter_max must be >= 0 and shape_area >= 1")


_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def _random_blob(rng: np.random.Generator, area: int) -> np.ndarray:
    pts = [(0, 0)]
    seen = {(0, 0)}
    while len(pts) < area:
        x, y = pts[rng.integers(len(pts))]
        dx, dy = _STEPS[rng.integers(4)]
        p = (x + dx, y + dy)
        if p not in seen:
            seen.add(p)
            pts.append(p)
    arr = np.array(pts)
    arr -= arr.min(axis=0)
    mask = np.zeros((arr[:, 1].max() + 1, arr[:, 0].max() + 1), dtype=bool)
    mask[arr[:, 1], arr[:, 0]] = True
    return mask


def _noisy_instance(rng: np.random.Generator, base: np.ndarray, p: float) -> np.ndarray:
    frame = np.pad(base, 1)
    if p > 0:
        four = ndimage.generate_binary_structure(2, 1)
        grown = ndimage.binary_dilation(frame, four)
        shrunk = ndimage.binary_erosion(frame, four, border_value=0)
        boundary = grown & ~shrunk
        flips = boundary & (rng.random(frame.shape) < p)
        frame = frame ^ flips
        labels, count = ndimage.label(frame, structure=np.ones((3, 3), dtype=bool))
        if count == 0:
            return np.pad(base, 1)
        sizes = ndimage.sum_labels(frame, labels, index=np.arange(1, count + 1))
        frame = labels == (int(np.argmax(sizes)) + 1)
    return frame


def boundary_length(bitmap: Bitmap) -> int:
    """Ink pixels with at least one 4-neighbour outside the ink."""
    px = np.pad(bitmap.pixels, 1)
    inner = ndimage.binary_erosion(px, ndimage.generate_binary_structure(2, 1), border_value=0)
    return int((px & ~inner).sum())


def generate_corpus(spec: CorpusSpec) -> tuple[Bitmap, list[int], list[Bitmap]]:
    """Stamp noisy copies of random blob shapes onto a page.

    Returns the page, the base-shape label of every glyph in reading order,
    and the base shapes. Instance ``i`` uses shape ``i % base_shape_count``.
    """
    rng = np.random.default_rng(spec.seed)
    shapes: list[np.ndarray] = []
    keys = set()
    attempts = 0
    while len(shapes) < spec.base_shape_count:
        blob = _random_blob(rng, spec.shape_area)
        key = (blob.shape, blob.tobytes())
        attempts += 1
        if key in keys:
            if attempts > 100 * spec.base_shape_count:
                raise CapacityError(
                    f"cannot draw {spec.base_shape_count} distinct shapes of area {spec.shape_area}")
            continue
        keys.add(key)
        shapes.append(blob)

    max_h = max(s.shape[0] for s in shapes) + 2
    max_w = max(s.shape[1] for s in shapes) + 2
    cell_h = max_h + 2 * spec.jitter_max + 1
    cell_w = max_w + 2 * spec.jitter_max + 1
    cols = spec.page_width // cell_w
    rows = spec.page_height // cell_h
    if cols * rows < spec.glyph_instance_count:
        raise CapacityError(
            f"page {spec.page_width}x{spec.page_height} holds {cols * rows} cells of "
            f"{cell_w}x{cell_h}, need {spec.glyph_instance_count}")

    page = np.zeros((spec.page_height, spec.page_width), dtype=bool)
    placed = []
    for i in range(spec.glyph_instance_count):
        label = i % spec.base_shape_count
        inst = _noisy_instance(rng, shapes[label], spec.noise_flip_probability)
        r, c = divmod(i, cols)
        jx, jy = (rng.integers(-spec.jitter_max, spec.jitter_max + 1, size=2)
                  if spec.jitter_max else (0, 0))
        x0 = c * cell_w + spec.jitter_max + int(jx)
        y0 = r * cell_h + spec.jitter_max + int(jy)
        h, w = inst.shape
        page[y0: y0 + h, x0: x0 + w] |= inst
        ys, xs = np.nonzero(inst)
        placed.append((y0 + int(ys.min()), x0 + int(xs.min()), label))

    placed.sort()
    truth = [label for _, _, label in placed]
    return Bitmap(page), truth, [Bitmap(s) for s in shapes]
