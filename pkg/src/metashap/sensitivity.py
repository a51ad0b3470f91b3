"""Shapley-value dominance analysis over parameter grids.

At every grid point a three-player game is built whose players are the
parameter ratios. A coalition's configuration moves its members from the base
value to the grid-point value and leaves everyone else at base; its payoff is
the improvement of the chosen QoI relative to the base configuration.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from metashap.dispersion import DEFAULT_SCAN, RUBBER, qois
from metashap.errors import DomainError
from metashap.game import CooperativeGame, Dominance, dominance, monotone_modify, shapley_values

PLAYERS = ("E", "RHO", "H")
DIRECTIONS = ("decrease", "increase")
QOIS = ("first_cutoff", "gap_width")

NO_BANDGAP = "NO_BANDGAP"


def make_axis(low, high, count, scale="linear"):
    """Evenly spaced axis on a linear or logarithmic scale (endpoints included)."""
    if count < 1:
        raise DomainError("an axis needs at least one value")
    if count == 1:
        return (float(low),)
    if scale == "log":
        values = np.geomspace(low, high, count)
    elif scale == "linear":
        values = np.linspace(low, high, count)
    else:
        raise DomainError(f"unknown axis scale {scale!r}")
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class SweepSpec:
    axes: tuple  # one value tuple per player
    base: tuple
    direction: str = "decrease"
    qoi: str = "first_cutoff"
    scales: tuple = ("log", "linear", "linear")
    players: tuple = PLAYERS

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(tuple(float(v) for v in a) for a in self.axes))
        object.__setattr__(self, "base", tuple(float(b) for b in self.base))
        n = len(self.players)
        if len(self.axes) != n or len(self.base) != n:
            raise DomainError(f"need one axis and one base value per player ({n})")
        for name, axis in zip(self.players, self.axes):
            if not axis:
                raise DomainError(f"axis {name} is empty")
            steps = np.diff(axis)
            if not (np.all(steps > 0) or np.all(steps < 0)):
                raise DomainError(f"axis {name} must be strictly monotone")
        if any(not b > 0 for b in self.base):
            raise DomainError(f"base values must be positive, got {self.base}")
        if self.direction not in DIRECTIONS:
            raise DomainError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.qoi not in QOIS:
            raise DomainError(f"qoi must be one of {QOIS}, got {self.qoi!r}")

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    def points(self):
        return list(itertools.product(*self.axes))

    def configuration(self, point, mask):
        """Ratios for coalition ``mask``: members at ``point``, others at base."""
        return tuple(p if mask >> i & 1 else b for i, (p, b) in enumerate(zip(point, self.base)))

    def with_direction(self, direction):
        return SweepSpec(self.axes, self.base, direction, self.qoi, self.scales, self.players)


def _qoi_value(report, qoi):
    value = report.first_cutoff_hz if qoi == "first_cutoff" else report.first_gap_width_hz
    return None if value is None else float(value)


def _base_value(report, spec):
    value = _qoi_value(report, spec.qoi)
    if value is None and spec.direction == "increase" and spec.qoi == "gap_width":
        # no gap at base means zero width to improve on
        return 0.0
    return value


def _game_from_reports(point, spec, reports):
    """Raw game plus a flag telling whether the cell has a usable band gap."""
    base_q = _base_value(reports[0], spec)
    n = len(spec.players)
    full_q = _qoi_value(reports[(1 << n) - 1], spec.qoi)
    defined = base_q is not None and full_q is not None
    sign = -1.0 if spec.direction == "decrease" else 1.0
    payoffs = [0.0]
    for mask in range(1, 1 << n):
        q = _qoi_value(reports[mask], spec.qoi)
        if q is None or base_q is None:
            payoffs.append(0.0)
        else:
            payoffs.append(sign * (q - base_q))
    return CooperativeGame(spec.players, payoffs), defined


def build_game_at(point, spec, evaluate):
    """Raw (unmodified) characteristic function at ``point``.

    ``evaluate`` maps a ratio tuple to an object exposing ``first_cutoff_hz``
    and ``first_gap_width_hz`` (``None`` when there is no band gap). A
    configuration without a gap contributes no improvement (payoff 0).
    """
    n = len(spec.players)
    reports = [evaluate(spec.configuration(point, mask)) for mask in range(1 << n)]
    game, _ = _game_from_reports(point, spec, reports)
    return game


@dataclass(frozen=True)
class MapCell:
    point: tuple
    label: object  # Dominance or NO_BANDGAP
    raw: CooperativeGame | None = None
    modified: CooperativeGame | None = None
    shapley: tuple | None = None
    dominance_pct: tuple | None = None
    ranking: tuple = ()

    @property
    def has_gap(self):
        return self.label != NO_BANDGAP

    def label_str(self):
        return label_string(self.label)


def label_string(label):
    if label == NO_BANDGAP:
        return NO_BANDGAP
    if label.kind == "none":
        return "NONE"
    if label.kind == "dominant":
        return str(label.members[0])
    return "TIE:" + "+".join(str(m) for m in label.members)


@dataclass(frozen=True)
class DominanceMap:
    spec: SweepSpec
    cells: tuple = field(default_factory=tuple)

    def cell_at(self, point):
        for cell in self.cells:
            if cell.point == tuple(point):
                return cell
        raise KeyError(point)

    def labels(self):
        return {cell.point: cell.label_str() for cell in self.cells}


def analyse_cell(point, spec, reports, tie_tol=1e-9):
    game, defined = _game_from_reports(point, spec, reports)
    if not defined:
        return MapCell(point=tuple(point), label=NO_BANDGAP, raw=game)
    modified = monotone_modify(game)
    result = shapley_values(modified, tie_tol)
    return MapCell(
        point=tuple(point),
        label=dominance(result),
        raw=game,
        modified=modified,
        shapley=result.values,
        dominance_pct=result.dominance_pct,
        ranking=result.ranking,
    )


def _evaluate_all(configs, evaluate, jobs):
    if jobs == 1 or len(configs) < 2:
        return [evaluate(c) for c in configs]
    return Parallel(n_jobs=jobs)(delayed(evaluate)(c) for c in configs)


def dominance_map(spec, evaluate, jobs=1, tie_tol=1e-9):
    """Label every grid point of ``spec`` with its dominant parameter(s).

    Each distinct ratio configuration is evaluated once; results are keyed by
    configuration so the output does not depend on ``jobs``.
    """
    points = spec.points()
    n = len(spec.players)
    configs = sorted({spec.configuration(p, m) for p in points for m in range(1 << n)})
    try:
        evaluated = _evaluate_all(configs, evaluate, jobs)
    except Exception as exc:
        raise RuntimeError(f"evaluation failed while sweeping: {exc}") from exc
    lookup = dict(zip(configs, evaluated))
    cells = []
    for p in points:
        reports = [lookup[spec.configuration(p, m)] for m in range(1 << n)]
        cells.append(analyse_cell(p, spec, reports, tie_tol))
    return DominanceMap(spec=spec, cells=tuple(cells))


class DispersionEvaluator:
    """Picklable ratio -> band-gap report callable for sweeps."""

    def __init__(self, reference=RUBBER, search=DEFAULT_SCAN):
        self.reference = reference
        self.search = search

    def __call__(self, ratios):
        try:
            return qois(ratios, self.reference, self.search)
        except Exception as exc:
            raise RuntimeError(f"dispersion evaluation failed at ratios {tuple(ratios)}: {exc}") from exc


BRAGG_BASE = (0.1, 0.1, 0.1)
SONIC_BASE = (1.0, 1.0, 1.0)
# (low, high, scale) for E, rho and h ratios
BRAGG_RANGES = ((0.1, 50000.0, "log"), (0.1, 9.5, "linear"), (0.1, 11.0, "linear"))
SONIC_RANGES = ((1.0, 100000.0, "log"), (1.0, 10.0, "linear"), (1.0, 10.0, "linear"))


def bragg_spec(counts=(5, 5, 5), direction="decrease", qoi="first_cutoff", ranges=BRAGG_RANGES):
    axes = tuple(make_axis(lo, hi, c, sc) for (lo, hi, sc), c in zip(ranges, counts))
    return SweepSpec(axes, BRAGG_BASE, direction, qoi, tuple(r[2] for r in ranges))


MAP_HEADER = [
    "e_ratio", "rho_ratio", "h_ratio", "label",
    "phi_e", "phi_rho", "phi_h", "dom_e_pct", "dom_rho_pct", "dom_h_pct",
]


def _fmt(x):
    return "" if x is None else repr(float(x))


def write_map_csv(path, dmap):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MAP_HEADER)
        for cell in dmap.cells:
            phi = cell.shapley or (None,) * 3
            pct = cell.dominance_pct or (None,) * 3
            writer.writerow(
                [_fmt(x) for x in cell.point]
                + [cell.label_str()]
                + [_fmt(x) for x in phi]
                + [_fmt(x) for x in pct]
            )


def cell_to_dict(cell):
    return {
        "point": list(cell.point),
        "label": cell.label_str(),
        "raw_payoffs": None if cell.raw is None else list(cell.raw.payoffs),
        "modified_payoffs": None if cell.modified is None else list(cell.modified.payoffs),
        "shapley": None if cell.shapley is None else list(cell.shapley),
        "dominance_pct": None if cell.dominance_pct is None else list(cell.dominance_pct),
        "ranking": [list(t) for t in cell.ranking],
    }


# Two-input continuous demo ---------------------------------------------------


def quadratic_demo(x1, x2):
    return 3.0 * x1**2 + x2**2 - x1 * x2


def continuous_shapley(f, point, base=(0.0, 0.0), tie_tol=1e-9):
    """Exact two-player Shapley values of v(S) = f(c_S) - f(base)."""
    x1, x2 = point
    b1, b2 = base
    f0 = f(b1, b2)
    game = CooperativeGame(
        ("x1", "x2"), [0.0, f(x1, b2) - f0, f(b1, x2) - f0, f(x1, x2) - f0]
    )
    return shapley_values(game, tie_tol)


@dataclass(frozen=True)
class ContinuousMap:
    x1: tuple
    x2: tuple
    labels: np.ndarray  # object array [i1, i2] of "x1" | "x2" | "TIE" | "NONE"
    x1_pct: np.ndarray  # x1 dominance percentage, nan where undefined


def continuous_map(f=quadratic_demo, x1_axis=None, x2_axis=None, base=(0.0, 0.0), tie_tol=1e-9):
    if x1_axis is None:
        x1_axis = tuple(round(0.1 * i, 10) for i in range(101))
    if x2_axis is None:
        x2_axis = x1_axis
    labels = np.empty((len(x1_axis), len(x2_axis)), dtype=object)
    pct = np.full(labels.shape, math.nan)
    for i, a in enumerate(x1_axis):
        for j, b in enumerate(x2_axis):
            result = continuous_shapley(f, (a, b), base, tie_tol)
            d = dominance(result)
            labels[i, j] = "NONE" if d.kind == "none" else ("TIE" if d.kind == "tie" else d.members[0])
            if result.dominance_pct is not None:
                pct[i, j] = result.dominance_pct[0]
    return ContinuousMap(tuple(x1_axis), tuple(x2_axis), labels, pct)


def write_continuous_csv(path, cmap):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x1", "x2", "label", "dom_x1_pct"])
        for i, a in enumerate(cmap.x1):
            for j, b in enumerate(cmap.x2):
                p = cmap.x1_pct[i, j]
                writer.writerow([repr(a), repr(b), cmap.labels[i, j], "" if math.isnan(p) else repr(float(p))])

