"""Dispersion relation of a two-layer periodic rod and band-gap extraction.

The unit cell consists of two elastic layers. A Bloch wave number k is real
(the wave propagates) iff the right-hand side of

    cos(k h) = cos(w h1/C1) cos(w h2/C2)
               - 1/2 (Z1/Z2 + Z2/Z1) sin(w h1/C1) sin(w h2/C2)

lies in [-1, 1], with Z = rho C the acoustic impedance of a layer. Frequencies
where |rhs| > 1 form the band gaps.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from metashap.errors import DomainError

TWO_PI = 2.0 * math.pi
# bisection stops once the edge residual ||rhs| - 1| drops below this
RESIDUAL_TOL = 1e-12
# a refined local maximum of |rhs| must clear 1 by this much to count as a gap
TANGENCY_MARGIN = 1e-12
# sampled peaks of |rhs| - 1 whose parabolic estimate stays below -PEAK_SCREEN are skipped
PEAK_SCREEN = 1e-2


def wave_speed(E, rho):
    """Longitudinal bar wave speed sqrt(E / rho)."""
    if not (E > 0 and rho > 0):
        raise DomainError(f"wave speed needs E > 0 and rho > 0, got E={E!r}, rho={rho!r}")
    return math.sqrt(E / rho)


@dataclass(frozen=True)
class MaterialLayer:
    youngs_modulus: float
    density: float
    thickness: float = 1.0

    def __post_init__(self):
        for name in ("youngs_modulus", "density", "thickness"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be positive and finite, got {value!r}")

    @property
    def wave_speed(self):
        return wave_speed(self.youngs_modulus, self.density)

    @property
    def impedance(self):
        return self.density * self.wave_speed

    @property
    def transit_time(self):
        """Time a wave needs to cross the layer, h / C."""
        return self.thickness / self.wave_speed


RUBBER = MaterialLayer(youngs_modulus=3.49e6, density=1100.0, thickness=1.0)


@dataclass(frozen=True)
class LayeredUnitCell:
    layer1: MaterialLayer
    layer2: MaterialLayer

    @property
    def width(self):
        return self.layer1.thickness + self.layer2.thickness

    def swapped(self):
        return LayeredUnitCell(self.layer2, self.layer1)

    def scaled(self, thickness=1.0, stiffness=1.0):
        """Copy with both thicknesses and/or both Young's moduli multiplied."""

        def _scale(layer):
            return MaterialLayer(
                layer.youngs_modulus * stiffness, layer.density, layer.thickness * thickness
            )

        return LayeredUnitCell(_scale(self.layer1), _scale(self.layer2))


@dataclass(frozen=True)
class ParameterRatios:
    """Layer-1 to layer-2 property ratios."""

    e_ratio: float
    rho_ratio: float
    h_ratio: float

    def __post_init__(self):
        for name in ("e_ratio", "rho_ratio", "h_ratio"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be positive and finite, got {value!r}")

    def as_tuple(self):
        return (self.e_ratio, self.rho_ratio, self.h_ratio)

    def to_cell(self, reference=RUBBER, width=1.0):
        """Layer 2 is the reference material; layer 1 is ratios x reference.

        The thicknesses split the fixed cell width as h_ratio : 1.
        """
        h1 = width * self.h_ratio / (1.0 + self.h_ratio)
        h2 = width / (1.0 + self.h_ratio)
        layer1 = MaterialLayer(
            reference.youngs_modulus * self.e_ratio, reference.density * self.rho_ratio, h1
        )
        layer2 = MaterialLayer(reference.youngs_modulus, reference.density, h2)
        return LayeredUnitCell(layer1, layer2)


@dataclass(frozen=True)
class BandGapReport:
    gaps: tuple = ()
    omega_max_searched: float = 0.0

    def __post_init__(self):
        prev_upper = -math.inf
        for lower, upper in self.gaps:
            if not (prev_upper < lower < upper):
                raise DomainError(f"gap intervals must be disjoint and increasing: {self.gaps!r}")
            prev_upper = upper

    @property
    def has_gap(self):
        return bool(self.gaps)

    @property
    def first_cutoff_hz(self):
        return self.gaps[0][0] if self.gaps else None

    @property
    def first_gap_width_hz(self):
        return self.gaps[0][1] - self.gaps[0][0] if self.gaps else None

    def to_dict(self):
        return {
            "gaps": [{"lower_hz": lo, "upper_hz": hi} for lo, hi in self.gaps],
            "first_cutoff_hz": self.first_cutoff_hz,
            "first_gap_width_hz": self.first_gap_width_hz,
        }


@dataclass(frozen=True)
class ScanSettings:
    """Frequency search settings for :func:`find_band_gaps`.

    ``omega_max=None`` selects the default ceiling (see :func:`default_omega_max`)
    and enables adaptive doubling; an explicit ceiling is searched as given.
    """

    omega_max: float | None = None
    n_samples: int = 4096
    edge_tol: float = 1e-9
    max_doublings: int = 3


DEFAULT_SCAN = ScanSettings()


def impedance_mismatch(cell):
    """The factor (Z1/Z2 + Z2/Z1) / 2, >= 1 with equality iff impedances match."""
    z = cell.layer1.impedance / cell.layer2.impedance
    return 0.5 * (z + 1.0 / z)


def dispersion_rhs(omega, cell):
    """Right-hand side of the dispersion relation (cos k h) at angular frequency omega.

    Accepts a scalar or an array of frequencies.
    """
    l1, l2 = cell.layer1, cell.layer2
    mismatch = impedance_mismatch(cell)
    w = np.asarray(omega, dtype=float)
    p1 = w * l1.transit_time
    p2 = w * l2.transit_time
    out = np.cos(p1) * np.cos(p2) - mismatch * np.sin(p1) * np.sin(p2)
    return float(out) if out.ndim == 0 else out


def default_omega_max(cell):
    return 40.0 * math.pi * min(1.0 / cell.layer1.transit_time, 1.0 / cell.layer2.transit_time)


def _excess(omega, cell):
    return np.abs(dispersion_rhs(omega, cell)) - 1.0


def _bisect_edges(cell, lo, hi, edge_tol):
    """Refine brackets [lo, hi] whose ends straddle |rhs| = 1; vectorised."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    if lo.size == 0:
        return lo
    lo_inside = _excess(lo, cell) > 0
    active = np.ones(lo.shape, dtype=bool)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g = _excess(mid, cell)
        same_as_lo = (g > 0) == lo_inside
        lo = np.where(active & same_as_lo, mid, lo)
        hi = np.where(active & ~same_as_lo, mid, hi)
        mid = 0.5 * (lo + hi)
        converged = (hi - lo <= edge_tol * hi) & (np.abs(_excess(mid, cell)) <= RESIDUAL_TOL)
        exhausted = (mid == lo) | (mid == hi)
        active &= ~(converged | exhausted)
        if not active.any():
            break
    return 0.5 * (lo + hi)


def _hidden_peaks(omega, g, cell):
    """Local maxima of |rhs| that sit between grid samples but poke above 1.

    Returns a list of (index, omega_peak) with the peak strictly inside a gap.
    """
    found = []
    interior = np.arange(1, len(g) - 1)
    left, mid, right = g[interior - 1], g[interior], g[interior + 1]
    is_peak = (mid <= 0) & (mid >= left) & (mid >= right)
    # parabolic vertex estimate; only peaks that come close to 1 are refined
    curvature = left - 2.0 * mid + right
    with np.errstate(divide="ignore", invalid="ignore"):
        vertex = np.where(curvature < 0, mid - (right - left) ** 2 / (8.0 * curvature), mid)
    is_peak &= vertex > -PEAK_SCREEN
    for i in interior[is_peak]:
        res = minimize_scalar(
            lambda w: -_excess(w, cell),
            bounds=(omega[i - 1], omega[i + 1]),
            method="bounded",
            options={"xatol": 1e-14 * omega[i + 1]},
        )
        if -res.fun > TANGENCY_MARGIN:
            found.append((i, float(res.x)))
    return found


def _rhs_zero(cell, lo, hi):
    return brentq(lambda w: dispersion_rhs(w, cell), lo, hi, xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps)


def _scan(cell, omega_max, n_samples, edge_tol):
    """One pass over (0, omega_max]; returns (gaps in rad/s, last gap closed?).

    Besides sign changes of |rhs| - 1 on the grid, two sub-grid features are
    resolved: a pass band squeezed between two in-gap samples (rhs flips sign
    across it, since every 1D band carries rhs from +1 to -1 or back) and a gap
    squeezed between two in-band samples (a local maximum of |rhs| above 1).
    """
    omega = np.linspace(0.0, omega_max, n_samples)
    rhs = dispersion_rhs(omega, cell)
    g = np.abs(rhs) - 1.0
    inside = g > 0
    inside[0] = False

    # each gap is (lower-edge bracket, upper-edge bracket or None if open at omega_max)
    gaps = []
    diff = np.diff(inside.astype(np.int8))
    starts = list(np.flatnonzero(diff == 1) + 1)
    ends = list(np.flatnonzero(diff == -1))
    if len(ends) < len(starts):
        ends.append(None)
    for s, e in zip(starts, ends):
        lower = (omega[s - 1], omega[s])
        last = n_samples - 1 if e is None else e
        run = np.arange(s, last)
        flips = run[np.signbit(rhs[run]) != np.signbit(rhs[run + 1])]
        for j in flips:
            z = _rhs_zero(cell, omega[j], omega[j + 1])
            gaps.append((lower, (omega[j], z)))
            lower = (z, omega[j + 1])
        gaps.append((lower, None if e is None else (omega[e], omega[e + 1])))
    for i, peak in _hidden_peaks(omega, g, cell):
        gaps.append(((omega[i - 1], peak), (peak, omega[i + 1])))
    gaps.sort(key=lambda gap: gap[0][0])

    brackets = [gap[0] for gap in gaps] + [gap[1] for gap in gaps if gap[1] is not None]
    edges = iter(_bisect_edges(cell, [b[0] for b in brackets], [b[1] for b in brackets], edge_tol))
    lowers = [float(next(edges)) for _ in gaps]
    out = []
    for lower, gap in zip(lowers, gaps):
        out.append((lower, omega_max if gap[1] is None else float(next(edges))))
    closed = not gaps or gaps[-1][1] is not None
    return out, closed


def find_band_gaps(cell, omega_max=None, n_samples=4096, edge_tol=1e-9, max_doublings=3):
    """Locate the band gaps of ``cell`` on (0, omega_max].

    Gaps are detected where |rhs| > 1 on a uniform grid (plus refined local
    maxima of |rhs| between samples) and each edge is bisected to ``edge_tol``
    relative accuracy. With ``omega_max=None`` the default ceiling is doubled,
    together with the sample count, until two gaps or a closed gap are found.
    """
    if n_samples < 2:
        raise DomainError(f"n_samples must be >= 2, got {n_samples}")
    adaptive = omega_max is None
    if adaptive:
        omega_max = default_omega_max(cell)
    if not omega_max > 0:
        raise DomainError(f"omega_max must be positive, got {omega_max!r}")
    if impedance_mismatch(cell) == 1.0:
        # matched impedances: rhs = cos(w h1/C1 + w h2/C2), never outside [-1, 1]
        return BandGapReport(gaps=(), omega_max_searched=float(omega_max))

    for attempt in range(max_doublings + 1):
        gaps, closed = _scan(cell, omega_max, n_samples, edge_tol)
        if not adaptive or len(gaps) >= 2 or (gaps and closed) or attempt == max_doublings:
            break
        omega_max *= 2.0
        n_samples *= 2
    hz = tuple((lo / TWO_PI, hi / TWO_PI) for lo, hi in gaps)
    return BandGapReport(gaps=hz, omega_max_searched=float(omega_max))


def qois(ratios, reference=RUBBER, search=DEFAULT_SCAN):
    """Band-gap report of the cell built from ``ratios`` over ``reference``."""
    if not isinstance(ratios, ParameterRatios):
        ratios = ParameterRatios(*ratios)
    cell = ratios.to_cell(reference)
    return find_band_gaps(
        cell,
        omega_max=search.omega_max,
        n_samples=search.n_samples,
        edge_tol=search.edge_tol,
        max_doublings=search.max_doublings,
    )


def band_diagram(cell, omega_max=None, n_samples=2048):
    """Sampled rhs over [0, omega_max] for plotting."""
    if omega_max is None:
        omega_max = default_omega_max(cell)
    omega = np.linspace(0.0, omega_max, n_samples)
    rhs = dispersion_rhs(omega, cell)
    return omega, rhs


def write_band_csv(path, omega, rhs):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["omega_rad_s", "f_hz", "rhs", "propagating"])
        for w, r in zip(omega, rhs):
            writer.writerow([repr(float(w)), repr(float(w) / TWO_PI), repr(float(r)), int(abs(r) <= 1.0)])


def write_gap_json(path, report):
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
