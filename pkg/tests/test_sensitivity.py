import csv
import functools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metashap.dispersion import BandGapReport
from metashap.errors import DomainError
from metashap.sensitivity import (
    BRAGG_BASE,
    MAP_HEADER,
    NO_BANDGAP,
    DispersionEvaluator,
    SweepSpec,
    bragg_spec,
    build_game_at,
    cell_to_dict,
    continuous_map,
    continuous_shapley,
    dominance_map,
    make_axis,
    quadratic_demo,
    write_map_csv,
)

# Decrease/first-cutoff payoffs at (E, rho, h) = (0.1, 2, 1) with base 0.1,
# from the 1e6-sample dense scan in tests/oracles.py. Bit order: E, RHO, H.
ORACLE_PAYOFFS = {
    0b000: 0.0,
    0b001: 0.0,
    0b010: 0.2890577949868245,
    0b011: 0.2890577949868245,
    0b100: 5.969787599550754,
    0b101: 5.969787599550754,
    0b110: 8.36469745202525,
    0b111: 8.36469745202525,
}


@functools.lru_cache(maxsize=None)
def _cached(ratios):
    return DispersionEvaluator()(ratios)


def evaluate(ratios):
    return _cached(tuple(ratios))


class Scaled:
    """Evaluator whose QoIs are multiplied by a constant."""

    def __init__(self, c):
        self.c = c

    def __call__(self, ratios):
        rep = evaluate(ratios)
        return BandGapReport(tuple((self.c * lo, self.c * hi) for lo, hi in rep.gaps), rep.omega_max_searched)


SMALL = bragg_spec(counts=(3, 3, 3))


def test_payoff_table_matches_dense_scan():
    game = build_game_at((0.1, 2.0, 1.0), SweepSpec(((0.1,), (2.0,), (1.0,)), BRAGG_BASE), evaluate)
    for mask, value in ORACLE_PAYOFFS.items():
        assert game.payoffs[mask] == pytest.approx(value, abs=1e-6)


def test_empty_coalition_is_zero_everywhere():
    for spec in (SMALL, SMALL.with_direction("increase")):
        dmap = dominance_map(spec, evaluate)
        assert len(dmap.cells) == 27
        assert all(cell.raw.payoffs[0] == 0.0 for cell in dmap.cells)


def test_direction_duality():
    down = dominance_map(SMALL, evaluate)
    up = dominance_map(SMALL.with_direction("increase"), evaluate)
    for a, b in zip(down.cells, up.cells):
        assert a.point == b.point
        assert a.raw.payoffs == tuple(-v for v in b.raw.payoffs)


@pytest.mark.parametrize("qoi", ["first_cutoff", "gap_width"])
def test_qoi_scaling_keeps_labels(qoi):
    spec = SweepSpec(SMALL.axes, SMALL.base, "decrease", qoi)
    plain = dominance_map(spec, evaluate)
    scaled = dominance_map(spec, Scaled(7.5))
    assert plain.labels() == scaled.labels()
    raw = SweepSpec(SMALL.axes, SMALL.base, "decrease", qoi)
    for point in raw.points()[:9]:
        g1 = build_game_at(point, raw, evaluate)
        g2 = build_game_at(point, raw, Scaled(7.5))
        assert np.allclose(g2.payoffs, 7.5 * np.array(g1.payoffs), rtol=1e-9, atol=1e-9)


def test_map_is_independent_of_worker_count():
    a = dominance_map(SMALL, DispersionEvaluator(), jobs=1)
    b = dominance_map(SMALL, DispersionEvaluator(), jobs=2)
    assert a.labels() == b.labels()
    assert [c.shapley for c in a.cells] == [c.shapley for c in b.cells]


def test_single_point_at_base_is_none():
    spec = SweepSpec(((0.1,), (0.1,), (0.1,)), BRAGG_BASE)
    (cell,) = dominance_map(spec, evaluate).cells
    assert cell.label_str() == "NONE"
    assert cell.raw.payoffs == (0.0,) * 8


def test_gapless_full_coalition_is_no_bandgap():
    spec = SweepSpec(((1.0,), (1.0,), (1.0,)), BRAGG_BASE)
    (cell,) = dominance_map(spec, evaluate).cells
    assert cell.label == NO_BANDGAP
    assert not cell.has_gap


def test_increase_width_without_base_gap_uses_zero_width():
    spec = SweepSpec(((2.0,), (1.0,), (1.0,)), (1.0, 1.0, 1.0), "increase", "gap_width")
    (cell,) = dominance_map(spec, evaluate).cells
    width = evaluate((2.0, 1.0, 1.0)).first_gap_width_hz
    assert cell.raw.payoffs[1] == pytest.approx(width)
    assert cell.label_str() == "E"


def test_young_modulus_never_helps_decrease_cutoff():
    dmap = dominance_map(SMALL, evaluate)
    for cell in dmap.cells:
        if cell.has_gap:
            assert cell.shapley[0] == 0.0


def test_evaluation_failure_names_point():
    def broken(ratios):
        if ratios[0] > 1:
            raise ValueError("solver blew up")
        return evaluate(ratios)

    with pytest.raises(RuntimeError, match="solver blew up"):
        dominance_map(SMALL, broken)


def test_spec_validation():
    with pytest.raises(DomainError, match="axis RHO is empty"):
        SweepSpec(((1.0,), (), (1.0,)), BRAGG_BASE)
    with pytest.raises(DomainError, match="monotone"):
        SweepSpec(((1.0, 3.0, 2.0), (1.0,), (1.0,)), BRAGG_BASE)
    with pytest.raises(DomainError):
        SweepSpec(((1.0,), (1.0,), (1.0,)), (0.0, 1.0, 1.0))
    with pytest.raises(DomainError):
        SweepSpec(((1.0,), (1.0,), (1.0,)), BRAGG_BASE, direction="sideways")
    with pytest.raises(DomainError):
        SweepSpec(((1.0,), (1.0,), (1.0,)), BRAGG_BASE, qoi="second_cutoff")


def test_make_axis():
    assert make_axis(0.1, 1000.0, 5, "log") == pytest.approx((0.1, 1.0, 10.0, 100.0, 1000.0))
    assert make_axis(0.0, 1.0, 3) == (0.0, 0.5, 1.0)
    assert make_axis(2.0, 9.0, 1) == (2.0,)
    with pytest.raises(DomainError):
        make_axis(0.0, 1.0, 0)


def test_map_csv_export(tmp_path):
    dmap = dominance_map(SMALL, evaluate)
    write_map_csv(tmp_path / "map.csv", dmap)
    with open(tmp_path / "map.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == MAP_HEADER
    assert len(rows) == 28
    labels = {r[3] for r in rows[1:]}
    assert labels <= {"E", "RHO", "H", "NONE", NO_BANDGAP} | {l for l in labels if l.startswith("TIE:")}
    d = cell_to_dict(dmap.cells[5])
    assert d["label"] == dmap.cells[5].label_str()


# Two-input demo ----------------------------------------------------------------


def test_continuous_examples():
    r = continuous_shapley(quadratic_demo, (1.0, 1.0))
    assert r.values == pytest.approx((2.5, 0.5))
    assert r.dominance_pct[0] == pytest.approx(83.333333, abs=1e-5)
    r = continuous_shapley(quadratic_demo, (4.0, 8.0))
    assert r.values == pytest.approx((32.0, 48.0))
    assert r.ranking[0] == ("x2",)


@given(st.floats(min_value=0.01, max_value=10.0))
def test_continuous_tie_on_boundary(x1):
    r = continuous_shapley(quadratic_demo, (x1, math.sqrt(3.0) * x1), tie_tol=1e-9)
    assert len(r.ranking[0]) == 2


@given(st.floats(0, 10), st.floats(0, 10))
def test_continuous_closed_form(x1, x2):
    r = continuous_shapley(quadratic_demo, (x1, x2))
    assert r.values[0] == pytest.approx(3 * x1**2 - x1 * x2 / 2, abs=1e-9)
    assert r.values[1] == pytest.approx(x2**2 - x1 * x2 / 2, abs=1e-9)


def test_continuous_map_regions():
    cmap = continuous_map()
    assert cmap.labels.shape == (101, 101)
    tol = 1e-6
    for i, a in enumerate(cmap.x1):
        for j, b in enumerate(cmap.x2):
            label = cmap.labels[i, j]
            if b < math.sqrt(3) * a - tol:
                assert label == "x1"
            elif b > math.sqrt(3) * a + tol:
                assert label == "x2"
    assert cmap.labels[0, 0] == "NONE"
