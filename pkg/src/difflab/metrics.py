"""Nonparametric two-sample distances for generated-vs-held-out comparison.

These stand in for learned-feature scores at desk scale: they operate on
raw coordinates (2-D points) or flattened pixels, need no external
networks, and are exact enough to back acceptance checks. All estimators
are V-statistics (diagonals included) so identical multisets score exactly
zero and values never go negative beyond float noise.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError

__all__ = ["MetricReport", "energy_distance", "mmd_rbf", "nearest_neighbor_recall",
           "compute_report", "append_report_csv"]


@dataclass(frozen=True)
class MetricReport:
    energy_distance: float
    mmd_rbf: float
    nearest_neighbor_recall: float

    def __post_init__(self):
        for name in ("energy_distance", "mmd_rbf", "nearest_neighbor_recall"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")


def _flat(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    return arr.reshape(arr.shape[0], -1)


def energy_distance(a, b) -> float:
    """2 E||a-b|| - E||a-a'|| - E||b-b'|| over all pairs."""
    a, b = _flat(a), _flat(b)
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ConfigError("energy distance needs at least 2 samples per set")
    d_ab = cdist(a, b).mean()
    d_aa = cdist(a, a).mean()
    d_bb = cdist(b, b).mean()
    return float(max(0.0, 2.0 * d_ab - d_aa - d_bb))


def mmd_rbf(a, b, bandwidth: float | None = None) -> float:
    """Squared maximum mean discrepancy with an RBF kernel.

    bandwidth defaults to the median pairwise distance over the pooled set.
    """
    a, b = _flat(a), _flat(b)
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ConfigError("mmd needs at least 2 samples per set")
    if bandwidth is None:
        pooled = np.concatenate([a, b], axis=0)
        dists = cdist(pooled, pooled)
        positive = dists[dists > 0]
        bandwidth = float(np.median(positive)) if positive.size else 1.0
    if bandwidth <= 0:
        raise ConfigError(f"bandwidth must be positive, got {bandwidth}")
    gamma = 1.0 / (2.0 * bandwidth**2)
    k_aa = np.exp(-gamma * cdist(a, a, "sqeuclidean")).mean()
    k_bb = np.exp(-gamma * cdist(b, b, "sqeuclidean")).mean()
    k_ab = np.exp(-gamma * cdist(a, b, "sqeuclidean")).mean()
    return float(max(0.0, k_aa + k_bb - 2.0 * k_ab))


def nearest_neighbor_recall(generated, data) -> float:
    """Fraction of data points with a generated sample inside their 1-NN ball.

    The ball radius is each data point's distance to its nearest other data
    point, so full recall means the generated set covers every data mode at
    the data's own resolution.
    """
    g, d = _flat(generated), _flat(data)
    if d.shape[0] < 2 or g.shape[0] < 1:
        raise ConfigError("recall needs >= 2 data points and >= 1 generated sample")
    dd = cdist(d, d)
    np.fill_diagonal(dd, np.inf)
    radius = dd.min(axis=1)
    gd = cdist(g, d)
    covered = gd.min(axis=0) <= radius
    return float(covered.mean())


def compute_report(generated, data, bandwidth: float | None = None) -> MetricReport:
    return MetricReport(
        energy_distance=energy_distance(generated, data),
        mmd_rbf=mmd_rbf(generated, data, bandwidth),
        nearest_neighbor_recall=nearest_neighbor_recall(generated, data),
    )


def append_report_csv(path: str, run_id: str, config_hash: str, report: MetricReport) -> None:
    """Append one keyed metric row, writing the header on first use."""
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(["run_id", "config_hash", "energy_distance", "mmd_rbf",
                             "nearest_neighbor_recall"])
        writer.writerow([run_id, config_hash, repr(report.energy_distance),
                         repr(report.mmd_rbf), repr(report.nearest_neighbor_recall)])
