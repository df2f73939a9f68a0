import io
import math

import numpy as np
import pytest

from debtcycle import (BASELINE_INIT, EmptyContour, GridSpec, InitialState, InvalidParameters, ModelParams,
                       OutcomeKind, baseline_params, classify, contour, render, slice_scan, sweep)
from debtcycle.outcome import QuadrantLabel
from debtcycle.phase import (CSV_HEADER, T_CAP, PhaseCell, PhaseTable, cell_color, classify_cell, color_family,
                             pixel_of, read_csv, read_ppm, to_csv)


@pytest.fixture(scope="module")
def baseline_table():
    return sweep(GridSpec())


def cell_at(table, p, s):
    return table.cell(*table.nearest(p, s))


@pytest.mark.parametrize("p, s, kind", [
    (0.8, 0.02, OutcomeKind.STRONG_SUCCESS),
    (0.2, -0.03, OutcomeKind.DEFAULT),
    (0.4, 0.005, OutcomeKind.PERMANENT_REMORTGAGING),
])
def test_sweep_examples(baseline_table, p, s, kind):
    cell = cell_at(baseline_table, p, s)
    assert (cell.p, cell.s) == pytest.approx((p, s), abs=1e-12)
    assert cell.kind is kind


def test_sweep_shape_and_order(baseline_table):
    assert baseline_table.shape == (201, 161)
    ps = [(c.p, c.s) for c in baseline_table.cells]
    assert ps == sorted(ps)
    assert not any(c.kind is OutcomeKind.INCONCLUSIVE for c in baseline_table.cells)


def test_sweep_matches_classify_cellwise(baseline_table):
    rng = np.random.default_rng(2)
    for k in rng.choice(len(baseline_table.cells), 200, replace=False):
        c = baseline_table.cells[k]
        out = classify(baseline_params(p=c.p, s=c.s), BASELINE_INIT)
        assert c.kind is out.kind and c.t_star == out.t_star


def test_parallel_sweep_equals_serial():
    grid = GridSpec(p_steps=21, s_steps=17)
    assert to_csv(sweep(grid, threads=1)) == to_csv(sweep(grid, threads=3))


def test_grid_validation():
    with pytest.raises(InvalidParameters):
        GridSpec(p_steps=1)
    with pytest.raises(InvalidParameters):
        GridSpec(p_min=0.5, p_max=0.2)
    with pytest.raises(InvalidParameters):
        GridSpec(p_max=1.5)


def test_cap_correctness(baseline_table):
    for c in baseline_table.cells:
        if c.t_star is None:
            assert c.capped_t is None
            continue
        assert c.capped_t == min(c.t_star, T_CAP)
        beige = color_family(cell_color(c)) == "beige"
        assert beige == (c.t_star > T_CAP and c.kind.is_success)


def test_csv_schema(baseline_table):
    text = to_csv(baseline_table)
    lines = text.split("\n")
    assert lines[0] == CSV_HEADER
    assert lines[-1] == "" and "\r" not in text
    assert len(lines) == 201 * 161 + 2
    gray = next(ln for ln in lines if ",PermanentRemortgaging," in ln)
    assert gray.endswith("PermanentRemortgaging,,")
    row = next(ln for ln in lines[1:] if ln.startswith("0.8,0.02,"))
    t_star = float(row.split(",")[-2])
    assert t_star == pytest.approx(11.43698, abs=1e-5)
    assert len(row.split(",")[-2].replace(".", "").lstrip("0")) <= 9


def test_csv_quotes_boundary_labels():
    table = sweep(GridSpec(p_min=0.5, p_max=0.6, p_steps=2, s_min=0.0, s_max=0.01, s_steps=2))
    text = to_csv(table)
    assert '"III[l1=1,l2=1]"' in text


def test_csv_deterministic():
    grid = GridSpec(p_steps=31, s_steps=21)
    assert to_csv(sweep(grid)).encode() == to_csv(sweep(grid)).encode()


def test_csv_round_trip(baseline_table):
    text = to_csv(baseline_table)
    back = read_csv(io.StringIO(text))
    assert back.shape == baseline_table.shape
    assert to_csv(back) == text


def test_read_csv_rejects_bad_input():
    with pytest.raises(InvalidParameters):
        read_csv(io.StringIO("a,b\n1,2\n"))
    with pytest.raises(InvalidParameters):
        read_csv(io.StringIO(CSV_HEADER + "\n0.1,0.0,1,1,I,StrongSuccess,1,1\n0.2,0.0,1,1,I,StrongSuccess,1,1\n"
                             "0.1,0.01,1,1,I,StrongSuccess,1,1\n"))


def synthetic_table(kind, t_star):
    p_values, s_values = np.linspace(0.6, 1.0, 5), np.linspace(0.01, 0.03, 4)
    cells = [PhaseCell(p, s, 1 + s, 1.0, QuadrantLabel("I"), kind, t_star,
                       None if t_star is None else min(t_star, T_CAP))
             for p in p_values for s in s_values]
    return PhaseTable(p_values, s_values, cells)


def test_render_uniform_orange():
    img = read_ppm(render(synthetic_table(OutcomeKind.STRONG_SUCCESS, 20.0), scale=3))
    assert img.shape == (12, 15, 3)
    assert np.all(img == img[0, 0])
    assert color_family(img[0, 0]) == "orange"


def test_render_baseline_has_all_families(baseline_table):
    data = render(baseline_table)
    assert data.startswith(b"P6\n201 161\n255\n")
    img = read_ppm(data)
    families = {color_family(px) for px in np.unique(img.reshape(-1, 3), axis=0)}
    assert {"orange", "purple", "gray", "beige"} <= families
    assert "unknown" not in families


def test_render_adverse_pixel_is_purple(baseline_table):
    img = read_ppm(render(baseline_table, scale=2))
    x, y = pixel_of(baseline_table, 0.2, -0.03, scale=2)
    assert color_family(img[y, x]) == "purple"
    x, y = pixel_of(baseline_table, 0.8, 0.02, scale=2)
    assert color_family(img[y, x]) == "orange"


def test_render_is_deterministic(baseline_table):
    assert render(baseline_table) == render(baseline_table)


def test_shade_darkens_with_t():
    light = cell_color(synthetic_table(OutcomeKind.STRONG_SUCCESS, 5.0).cells[0])
    dark = cell_color(synthetic_table(OutcomeKind.STRONG_SUCCESS, 300.0).cells[0])
    assert sum(dark) < sum(light)


def test_contour_level_20_in_quadrant_one(baseline_table):
    cs = contour(baseline_table, 20.0)
    assert cs.lines
    pts = np.vstack(cs.lines)
    in_q1 = (pts[:, 0] > 0.5) & (pts[:, 1] > 0.0)
    assert in_q1.any()
    assert cs.boundaries


def test_contour_below_minimum_is_empty(baseline_table):
    t_min = np.nanmin(baseline_table.t_star_field())
    with pytest.raises(EmptyContour):
        contour(baseline_table, t_min / 2)


def test_no_recycling_contour_separates_strong_and_weak(baseline_table):
    level = baseline_table.t_no_recycling
    assert level == pytest.approx(101.0101, abs=1e-4)
    for c in baseline_table.cells:
        if c.kind is OutcomeKind.STRONG_SUCCESS:
            assert c.t_star < level
        elif c.kind is OutcomeKind.WEAK_SUCCESS:
            assert c.t_star >= level - 1e-6
    cs = contour(baseline_table, level)
    kinds = baseline_table.kind_field()
    rows, cols = np.meshgrid(np.arange(kinds.shape[0]), np.arange(kinds.shape[1]), indexing="ij")
    dp = baseline_table.p_values[1] - baseline_table.p_values[0]
    ds = baseline_table.s_values[1] - baseline_table.s_values[0]
    strong = np.column_stack([rows[kinds == OutcomeKind.STRONG_SUCCESS], cols[kinds == OutcomeKind.STRONG_SUCCESS]])
    weak = np.column_stack([rows[kinds == OutcomeKind.WEAK_SUCCESS], cols[kinds == OutcomeKind.WEAK_SUCCESS]])
    assert len(strong) and len(weak)
    # in grid units every vertex of the level curve has both classes within one step
    for line in cs.lines:
        grid_pts = np.column_stack([(line[:, 0] - baseline_table.p_values[0]) / dp,
                                    (line[:, 1] - baseline_table.s_values[0]) / ds])
        for pt in grid_pts:
            assert np.min(np.hypot(*(strong - pt).T)) <= 1.0 + 1e-9
            assert np.min(np.hypot(*(weak - pt).T)) <= 1.0 + 1e-9


def test_slice_matches_sweep_column(baseline_table):
    i = baseline_table.nearest(0.4, 0.0)[0]
    res = slice_scan(baseline_params(), BASELINE_INIT, "p", float(baseline_table.p_values[i]),
                     -0.04, 0.04, 161)
    for j, row in enumerate(res.rows):
        assert row.kind is baseline_table.cell(i, j).kind
        assert row.t_star == baseline_table.cell(i, j).t_star


def test_slice_p04_transitions():
    res = slice_scan(baseline_params(), BASELINE_INIT, "p", 0.4, -0.04, 0.04, 161)
    xs = [tr.x for tr in res.transitions]
    assert any(abs(x + 0.0128) <= 0.0005 for x in xs)
    assert any(abs(x) <= 0.0001 for x in xs)
    assert res.t_no_recycling == pytest.approx(101.0101, abs=1e-4)
    assert res.axis == "s"


def test_slice_case_3a_along_p():
    params = ModelParams(ell=0.5, mu=0.5, p=0.5, s=-0.01, q=0.01, pi_star=10000.0)
    res = slice_scan(params, InitialState(90000.0, 900000.0), "s", -0.01, 0.3, 0.7, 41)
    into_success = [tr.x for tr in res.transitions if tr.after.is_success]
    assert any(abs(x - 0.5) < 1e-3 for x in into_success)


def test_slice_through_degenerate_point():
    res = slice_scan(baseline_params(), BASELINE_INIT, "s", 0.0, 0.0, 1.0, 21)
    mid = next(r for r in res.rows if abs(r.x - 0.5) < 1e-12)
    assert mid.kind is not OutcomeKind.INCONCLUSIVE
    assert all(r.kind is not OutcomeKind.INCONCLUSIVE for r in res.rows)


def test_slice_argument_checks():
    with pytest.raises(InvalidParameters):
        slice_scan(baseline_params(), BASELINE_INIT, "q", 0.1, 0.0, 1.0, 5)
    with pytest.raises(InvalidParameters):
        slice_scan(baseline_params(), BASELINE_INIT, "p", 0.4, 0.04, -0.04, 5)


def test_classify_cell_records_inconclusive(monkeypatch):
    from debtcycle import Inconclusive, phase

    def boom(*args, **kwargs):
        raise Inconclusive("forced")

    monkeypatch.setattr(phase, "classify", boom)
    cell = classify_cell(baseline_params(), BASELINE_INIT, 0.3, 0.01)
    assert cell.kind is OutcomeKind.INCONCLUSIVE and cell.t_star is None
    assert color_family(cell_color(cell)) == "inconclusive"
    assert math.isclose(cell.lambda1, 1.01)
