"""Regression datasets: generation from the dispersion solver, CSV import/export,
seeded splits and feature standardisation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from metashap.dispersion import DEFAULT_SCAN, RUBBER, qois
from metashap.errors import DomainError, FormatError
from metashap.sensitivity import BRAGG_RANGES, make_axis

CSV_HEADER = ["e_ratio", "rho_ratio", "h_ratio", "f_cutoff_hz", "gap_width_hz"]
FEATURES = ("e_ratio", "rho_ratio", "h_ratio")
TARGETS = ("cutoff", "width")

# 21 x 9 x 12 = 2268 grid points; the log-spaced E axis spans the most decades
DEFAULT_COUNTS = (21, 9, 12)


@dataclass(frozen=True)
class Sample:
    features: tuple
    targets: tuple | None  # (first_cutoff_hz, first_gap_width_hz) or None when no gap


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int
    test_frac: float
    val_frac: float

    def indices(self, name):
        return {"train": self.train, "validation": self.validation, "val": self.validation,
                "test": self.test}[name]


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, 3)
    targets: np.ndarray  # (n, 2), nan where the row has no band gap
    provenance: dict = field(default_factory=dict)
    split_: Split | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float).reshape(-1, 3)
        Y = np.asarray(self.targets, dtype=float).reshape(-1, 2)
        if len(X) != len(Y):
            raise DomainError("features and targets must have the same number of rows")
        X.flags.writeable = False
        Y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", Y)

    def __len__(self):
        return len(self.features)

    @property
    def samples(self):
        out = []
        for x, y in zip(self.features, self.targets):
            t = None if np.isnan(y).any() else (float(y[0]), float(y[1]))
            out.append(Sample(tuple(float(v) for v in x), t))
        return out

    @property
    def labelled(self):
        """Row indices usable for regression (both targets present)."""
        return np.flatnonzero(~np.isnan(self.targets).any(axis=1))

    def target(self, name):
        return self.targets[:, TARGETS.index(name)]

    def subset(self, name):
        """(X, y_all_targets) for a named split."""
        if self.split_ is None:
            raise DomainError("dataset has not been split")
        idx = self.split_.indices(name)
        return self.features[idx], self.targets[idx]

    def with_split(self, split):
        return Dataset(self.features, self.targets, dict(self.provenance), split)


def generate_bragg(counts=DEFAULT_COUNTS, ranges=BRAGG_RANGES, axes=None, reference=RUBBER,
                   search=DEFAULT_SCAN, jobs=1):
    """Evaluate the band-gap QoIs on a grid of ratios; no-gap points are dropped.

    ``axes`` (three value sequences) overrides ``counts``/``ranges``.
    """
    if axes is None:
        axes = tuple(make_axis(lo, hi, c, sc) for (lo, hi, sc), c in zip(ranges, counts))
        grid = {
            name: {"low": lo, "high": hi, "count": c, "scale": sc}
            for name, (lo, hi, sc), c in zip(FEATURES, ranges, counts)
        }
    else:
        axes = tuple(tuple(float(v) for v in a) for a in axes)
        grid = {name: {"values": list(a)} for name, a in zip(FEATURES, axes)}
    points = [(e, r, h) for e in axes[0] for r in axes[1] for h in axes[2]]
    if jobs == 1:
        reports = [qois(p, reference, search) for p in points]
    else:
        reports = Parallel(n_jobs=jobs)(delayed(qois)(p, reference, search) for p in points)

    rows, targets = [], []
    for p, rep in zip(points, reports):
        if rep.has_gap:
            rows.append(p)
            targets.append((rep.first_cutoff_hz, rep.first_gap_width_hz))
    provenance = {
        "source": "generated",
        "grid": grid,
        "excluded_count": len(points) - len(rows),
        "seed": None,
    }
    return Dataset(np.array(rows, dtype=float).reshape(-1, 3),
                   np.array(targets, dtype=float).reshape(-1, 2), provenance)


def _parse_float(text, line, column):
    try:
        value = float(text)
    except ValueError:
        raise FormatError(f"column {column}: cannot parse {text!r} as a number", line) from None
    if not math.isfinite(value):
        raise FormatError(f"column {column}: non-finite value {text!r}", line)
    return value


def import_csv(path):
    """Read a QoI table. Rows with both target fields empty denote no band gap."""
    path = Path(path)
    rows, targets = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise FormatError(f"expected header {','.join(CSV_HEADER)}, got {header}", 1)
        for line, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(CSV_HEADER):
                raise FormatError(f"expected {len(CSV_HEADER)} fields, got {len(record)}", line)
            feats = [_parse_float(t, line, c) for t, c in zip(record[:3], CSV_HEADER)]
            for name, value in zip(FEATURES, feats):
                if value <= 0:
                    raise FormatError(f"{name} must be positive, got {value!r}", line)
            cut, wid = record[3].strip(), record[4].strip()
            if not cut and not wid:
                tvals = [math.nan, math.nan]
            elif cut and wid:
                tvals = [_parse_float(cut, line, CSV_HEADER[3]), _parse_float(wid, line, CSV_HEADER[4])]
                if min(tvals) < 0:
                    raise FormatError(f"targets must be non-negative, got {tvals}", line)
            else:
                raise FormatError("targets must be both present or both empty", line)
            rows.append(feats)
            targets.append(tvals)
    provenance = {"source": "imported", "path": str(path), "excluded_count": 0, "seed": None}
    return Dataset(np.array(rows, dtype=float).reshape(-1, 3),
                   np.array(targets, dtype=float).reshape(-1, 2), provenance)


def _fmt(x):
    return "" if math.isnan(x) else repr(float(x))


def export_csv(path, ds):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for x, y in zip(ds.features, ds.targets):
            writer.writerow([repr(float(v)) for v in x] + [_fmt(v) for v in y])


def sidecar_path(csv_path):
    return Path(csv_path).with_suffix(".json")


def write_sidecar(csv_path, ds):
    prov = dict(ds.provenance)
    out = {k: prov.get(k) for k in ("source", "excluded_count", "seed")}
    if "grid" in prov:
        out["grid"] = prov["grid"]
    if "path" in prov:
        out["path"] = prov["path"]
    sidecar_path(csv_path).write_text(json.dumps(out, indent=2) + "\n", encoding="utf-8")


def save_dataset(csv_path, ds):
    export_csv(csv_path, ds)
    write_sidecar(csv_path, ds)


def split(ds, test_frac=0.2, val_frac=0.2, seed=0):
    """Seeded shuffle of the labelled rows into train / validation / test.

    Test and validation sizes are floored; the remainder goes to training.
    """
    for name, frac in (("test_frac", test_frac), ("val_frac", val_frac)):
        if not 0 < frac < 1:
            raise DomainError(f"{name} must lie in (0, 1), got {frac}")
    rows = ds.labelled
    n = len(rows)
    n_test = math.floor(n * test_frac)
    n_val = math.floor((n - n_test) * val_frac)
    perm = rows[np.random.default_rng(seed).permutation(n)]
    s = Split(
        train=np.sort(perm[n_test + n_val:]),
        validation=np.sort(perm[n_test:n_test + n_val]),
        test=np.sort(perm[:n_test]),
        seed=seed,
        test_frac=test_frac,
        val_frac=val_frac,
    )
    out = ds.with_split(s)
    out.provenance["seed"] = seed
    return out


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    scale: np.ndarray  # population standard deviation; 0 marks a constant feature

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        safe = np.where(self.scale > 0, self.scale, 1.0)
        return np.where(self.scale > 0, (X - self.mean) / safe, 0.0)

    def inverse_transform(self, Z):
        Z = np.asarray(Z, dtype=float)
        return np.where(self.scale > 0, Z * self.scale + self.mean, self.mean)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data["mean"], dtype=float), np.array(data["scale"], dtype=float))


def fit_scaler(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise DomainError("scaler needs a non-empty 2-D feature array")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    # spreads at rounding level of the mean count as constant
    scale = np.where(scale > 1e-12 * np.maximum(np.abs(mean), 1e-300), scale, 0.0)
    return Scaler(mean, scale)


@dataclass(frozen=True)
class QoiRecord:
    first_cutoff_hz: float | None
    first_gap_width_hz: float | None


def _key(ratios):
    return tuple(float(f"{v:.12g}") for v in ratios)


class LookupEvaluator:
    """Ratio -> QoI lookup over an imported table, for sweeps without a solver."""

    def __init__(self, ds):
        self.table = {}
        for x, y in zip(ds.features, ds.targets):
            rec = QoiRecord(None, None) if np.isnan(y).any() else QoiRecord(float(y[0]), float(y[1]))
            self.table[_key(x)] = rec

    def axes(self):
        keys = list(self.table)
        return tuple(tuple(sorted({k[i] for k in keys})) for i in range(3))

    def __call__(self, ratios):
        try:
            return self.table[_key(ratios)]
        except KeyError:
            raise KeyError(f"no table row for ratios {tuple(ratios)}") from None
