"""Phase diagrams over the (p, s) plane and their exports."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, TextIO

import numpy as np
from skimage.measure import find_contours

from .errors import EmptyContour, Inconclusive, InvalidParameters
from .model import BASELINE_INIT, InitialState, ModelParams, baseline_params
from .montecarlo import worker_count
from .outcome import (NoRecyclingConvention, OutcomeKind, QuadrantLabel, classify, quadrant,
                      t_no_recycling, threshold)

T_CAP = 400.0
CSV_HEADER = "p,s,lambda1,lambda2,quadrant,outcome,t_star,capped_t"


@dataclass(frozen=True)
class GridSpec:
    p_min: float = 0.0
    p_max: float = 1.0
    p_steps: int = 201
    s_min: float = -0.04
    s_max: float = 0.04
    s_steps: int = 161
    base: ModelParams = field(default_factory=baseline_params)
    init: InitialState = BASELINE_INIT

    def __post_init__(self) -> None:
        for name in ("p_steps", "s_steps"):
            value = getattr(self, name)
            if int(value) != value or value < 2:
                raise InvalidParameters(f"{name} must be an integer >= 2, got {value!r}")
        if not 0.0 <= self.p_min < self.p_max <= 1.0:
            raise InvalidParameters(f"need 0 <= p_min < p_max <= 1, got [{self.p_min}, {self.p_max}]")
        if not -1.0 < self.s_min < self.s_max or not math.isfinite(self.s_max):
            raise InvalidParameters(f"need -1 < s_min < s_max, got [{self.s_min}, {self.s_max}]")
        self.init.require_positive()

    @property
    def p_values(self) -> np.ndarray:
        return np.linspace(self.p_min, self.p_max, int(self.p_steps))

    @property
    def s_values(self) -> np.ndarray:
        return np.linspace(self.s_min, self.s_max, int(self.s_steps))


@dataclass(frozen=True)
class PhaseCell:
    p: float
    s: float
    lambda1: float
    lambda2: float
    quadrant: QuadrantLabel
    kind: OutcomeKind
    t_star: Optional[float]
    capped_t: Optional[float]


@dataclass(frozen=True)
class PhaseTable:
    """Cells in row-major (p, then s) order."""

    p_values: np.ndarray
    s_values: np.ndarray
    cells: list
    t_no_recycling: float = math.nan

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.p_values), len(self.s_values)

    def cell(self, i: int, j: int) -> PhaseCell:
        return self.cells[i * len(self.s_values) + j]

    def nearest(self, p: float, s: float) -> tuple[int, int]:
        return int(np.argmin(np.abs(self.p_values - p))), int(np.argmin(np.abs(self.s_values - s)))

    def t_star_field(self) -> np.ndarray:
        return np.array([math.nan if c.t_star is None else c.t_star for c in self.cells]).reshape(self.shape)

    def kind_field(self) -> np.ndarray:
        return np.array([c.kind for c in self.cells], dtype=object).reshape(self.shape)


def classify_cell(base: ModelParams, init: InitialState, p: float, s: float,
                  convention: NoRecyclingConvention = NoRecyclingConvention.MEAN_INSTALLMENT) -> PhaseCell:
    params = base.with_(p=float(p), s=float(s))
    try:
        out = classify(params, init, convention=convention)
        kind, t_star = out.kind, out.t_star
    except Inconclusive:
        kind, t_star = OutcomeKind.INCONCLUSIVE, None
    capped = None if t_star is None else min(t_star, T_CAP)
    return PhaseCell(float(p), float(s), params.lambda1, params.lambda2, quadrant(params), kind, t_star, capped)


def _sweep_rows(args) -> list:
    base, init, p_chunk, s_values, convention = args
    return [classify_cell(base, init, p, s, convention) for p in p_chunk for s in s_values]


def sweep(grid: GridSpec, threads: Optional[int] = None,
          convention: NoRecyclingConvention = NoRecyclingConvention.MEAN_INSTALLMENT) -> PhaseTable:
    """Classify every grid cell; Inconclusive cells are recorded, not raised."""
    p_values, s_values = grid.p_values, grid.s_values
    workers = min(worker_count(threads), len(p_values))
    if workers <= 1:
        cells = _sweep_rows((grid.base, grid.init, p_values, s_values, convention))
    else:
        chunks = np.array_split(p_values, workers * 4)
        jobs = [(grid.base, grid.init, c, s_values, convention) for c in chunks if len(c)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = [cell for part in pool.map(_sweep_rows, jobs) for cell in part]
    return PhaseTable(p_values, s_values, cells, t_no_recycling(grid.base, grid.init, convention))


# ------------------------------------------------------------------ contours

FAMILIES = {
    "success": lambda k: k.is_success,
    "default": lambda k: k is OutcomeKind.DEFAULT,
    "remortgage": lambda k: k is OutcomeKind.PERMANENT_REMORTGAGING,
}


@dataclass(frozen=True)
class ContourSet:
    level: float
    lines: list  # arrays of (p, s) vertices on the t* = level set
    boundaries: list  # arrays of (p, s) vertices between outcome families


def _to_ps(table: PhaseTable, path: np.ndarray) -> np.ndarray:
    rows = np.arange(len(table.p_values))
    cols = np.arange(len(table.s_values))
    return np.column_stack([np.interp(path[:, 0], rows, table.p_values),
                            np.interp(path[:, 1], cols, table.s_values)])


def family_boundaries(table: PhaseTable) -> list:
    kinds = table.kind_field()
    out = []
    for test in FAMILIES.values():
        mask = np.vectorize(test, otypes=[bool])(kinds).astype(float)
        if 0.0 < mask.mean() < 1.0:
            out.extend(_to_ps(table, path) for path in find_contours(mask, 0.5))
    return out


def contour(table: PhaseTable, level_t: float) -> ContourSet:
    """Marching squares on t* inside each outcome family separately."""
    field_t = table.t_star_field()
    kinds = table.kind_field()
    lines = []
    for name in ("success", "default"):
        mask = np.vectorize(FAMILIES[name], otypes=[bool])(kinds)
        if mask.sum() < 2:
            continue
        values = np.where(mask, field_t, np.nan)
        # find_contours ignores squares touching a masked-out corner
        filled = np.where(mask, values, 0.0)
        lines.extend(_to_ps(table, path) for path in find_contours(filled, level_t, mask=mask))
    if not lines:
        raise EmptyContour(f"t* = {level_t} is not attained on the grid")
    return ContourSet(level_t, lines, family_boundaries(table))


# -------------------------------------------------------------------- slices

@dataclass(frozen=True)
class SliceRow:
    x: float
    t_star: Optional[float]
    kind: OutcomeKind


@dataclass(frozen=True)
class Transition:
    x: float
    before: OutcomeKind
    after: OutcomeKind


@dataclass(frozen=True)
class SliceResult:
    axis: str  # the varied parameter
    fixed_axis: str
    fixed_value: float
    rows: list
    transitions: list
    t_no_recycling: float


def slice_scan(base: ModelParams, init: InitialState, fixed_axis: str, value: float,
               lo: float, hi: float, steps: int) -> SliceResult:
    """1-D scan with each class change refined by bisection."""
    if fixed_axis not in ("p", "s"):
        raise InvalidParameters(f"fixed axis must be 'p' or 's', got {fixed_axis!r}")
    if int(steps) != steps or steps < 2 or not lo < hi:
        raise InvalidParameters("slice needs lo < hi and at least 2 steps")
    axis = "s" if fixed_axis == "p" else "p"
    pinned = base.with_(**{fixed_axis: float(value)})
    xs = np.linspace(lo, hi, int(steps))
    rows = []
    for x in xs:
        cell = classify_cell(pinned, init, x, value) if axis == "p" else classify_cell(pinned, init, value, x)
        rows.append(SliceRow(float(x), cell.t_star, cell.kind))
    transitions = []
    for left, right in zip(rows, rows[1:]):
        if left.kind is right.kind:
            continue
        x = threshold(pinned, init, axis, (left.x, right.x), boundary=_same_as(left.kind))
        transitions.append(Transition(x, left.kind, right.kind))
    return SliceResult(axis, fixed_axis, float(value), rows, transitions, t_no_recycling(pinned, init))


def _same_as(kind: OutcomeKind) -> Callable[[OutcomeKind], bool]:
    return lambda k: k is kind


# ------------------------------------------------------------------ raster

# linear shade on [0, T_CAP]: short t* light, t* at the cap darkest
_SUCCESS_SHADES = ((255, 204, 102), (204, 85, 0))
_DEFAULT_SHADES = ((216, 191, 235), (84, 24, 120))
BEIGE = (238, 220, 178)
GRAY = (128, 128, 128)
BLACK = (0, 0, 0)


def _shade(pair, t: float) -> tuple[int, int, int]:
    f = min(max(t, 0.0), T_CAP) / T_CAP
    return tuple(int(round(a + (b - a) * f)) for a, b in zip(*pair))


def cell_color(cell: PhaseCell) -> tuple[int, int, int]:
    if cell.kind.is_success:
        return BEIGE if cell.t_star > T_CAP else _shade(_SUCCESS_SHADES, cell.capped_t)
    if cell.kind is OutcomeKind.DEFAULT:
        return _shade(_DEFAULT_SHADES, cell.capped_t)
    if cell.kind is OutcomeKind.PERMANENT_REMORTGAGING:
        return GRAY
    return BLACK


def color_family(rgb) -> str:
    """Name of the palette family an RGB triple belongs to."""
    rgb = tuple(int(v) for v in rgb)
    if rgb == BEIGE:
        return "beige"
    if rgb == GRAY:
        return "gray"
    if rgb == BLACK:
        return "inconclusive"
    for name, pair in (("orange", _SUCCESS_SHADES), ("purple", _DEFAULT_SHADES)):
        lo, hi = np.array(pair[0], float), np.array(pair[1], float)
        k = int(np.argmax(np.abs(hi - lo)))
        f = (rgb[k] - lo[k]) / (hi[k] - lo[k])
        if -1e-9 <= f <= 1 + 1e-9 and np.all(np.abs(lo + f * (hi - lo) - rgb) <= 1.0):
            return name
    return "unknown"


def pixel_of(table: PhaseTable, p: float, s: float, scale: int = 1) -> tuple[int, int]:
    """(x, y) of the top-left pixel of the cell nearest (p, s); p runs right, s runs up."""
    i, j = table.nearest(p, s)
    return i * scale, (len(table.s_values) - 1 - j) * scale


def render(table: PhaseTable, scale: int = 1) -> bytes:
    """Binary PPM (P6) with one scale x scale block per cell."""
    if int(scale) != scale or scale < 1:
        raise InvalidParameters("scale must be a positive integer")
    n_p, n_s = table.shape
    img = np.empty((n_s, n_p, 3), dtype=np.uint8)
    for i in range(n_p):
        for j in range(n_s):
            img[n_s - 1 - j, i] = cell_color(table.cell(i, j))
    img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    head = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return head + img.tobytes()


def read_ppm(data: bytes) -> np.ndarray:
    """Decode the P6 images written by :func:`render`; shape (height, width, 3)."""
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6" or parts[2] != b"255":
        raise ValueError("not an 8-bit binary PPM")
    width, height = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width, 3)


# --------------------------------------------------------------------- CSV

def _fmt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.9g}"


def csv_rows(table: PhaseTable) -> Iterable[list]:
    yield CSV_HEADER.split(",")
    for c in table.cells:
        yield [_fmt(c.p), _fmt(c.s), _fmt(c.lambda1), _fmt(c.lambda2), str(c.quadrant),
               c.kind.value, _fmt(c.t_star), _fmt(c.capped_t)]


def write_csv(table: PhaseTable, out: TextIO) -> None:
    # boundary labels such as III[l1=1,l2=1] carry a comma and get quoted
    csv.writer(out, lineterminator="\n").writerows(csv_rows(table))


def to_csv(table: PhaseTable) -> str:
    buf = io.StringIO()
    write_csv(table, buf)
    return buf.getvalue()


def _parse_quadrant(text: str) -> QuadrantLabel:
    label, _, marks = text.partition("[")
    marks = marks.rstrip("]").split(",") if marks else []
    return QuadrantLabel(label, "l1=1" in marks, "l2=1" in marks)


def read_csv(src: TextIO) -> PhaseTable:
    rows = [row for row in csv.reader(src) if row]
    if not rows or ",".join(rows[0]) != CSV_HEADER:
        raise InvalidParameters("not a phase table: unexpected header")
    cells = []
    try:
        for p, s, l1, l2, quad, kind, t_text, cap_text in rows[1:]:
            cells.append(PhaseCell(float(p), float(s), float(l1), float(l2), _parse_quadrant(quad),
                                   OutcomeKind(kind), float(t_text) if t_text else None,
                                   float(cap_text) if cap_text else None))
    except ValueError as exc:
        raise InvalidParameters(f"malformed phase table row: {exc}") from None
    p_values = np.array(sorted({c.p for c in cells}))
    s_values = np.array(sorted({c.s for c in cells}))
    if len(p_values) * len(s_values) != len(cells):
        raise InvalidParameters("phase table is not a full grid")
    return PhaseTable(p_values, s_values, cells)
