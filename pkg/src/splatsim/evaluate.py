"""Cloud-to-cloud evaluation: asymmetric C2C, per-class C2C, density
uniformity, splat coverage, and CSV report output.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, SplatSet


def _positions(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.positions
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


def c2c_distance(sim, ori) -> float:
    """Mean nearest-neighbor distance from every sim point into ori.

    Asymmetric by construction: c2c(sim, ori) != c2c(ori, sim) in general.
    """
    sim_pts = _positions(sim)
    ori_pts = _positions(ori)
    if len(sim_pts) == 0 or len(ori_pts) == 0:
        raise ValueError("c2c requires two non-empty clouds")
    d, _ = cKDTree(ori_pts).query(sim_pts, k=1)
    return float(np.mean(d))


def c2c_per_class(sim: PointCloud, ori: PointCloud, classes=None) -> dict[int, tuple]:
    """C2C restricted class-to-class.

    Returns {class_id: (mean_distance, sim_count)}; a class missing from
    either cloud maps to (None, sim_count) - flagged absent, never zero.
    """
    if sim.labels is None:
        raise ValueError("sim cloud has no labels")
    if ori.labels is None:
        raise ValueError("ori cloud has no labels")
    if classes is None:
        classes = sorted(int(c) for c in np.unique(sim.labels))
    table = {}
    for c in classes:
        sim_sel = sim.positions[sim.labels == c]
        ori_sel = ori.positions[ori.labels == c]
        if len(sim_sel) == 0 or len(ori_sel) == 0:
            table[int(c)] = (None, int(len(sim_sel)))
            continue
        d, _ = cKDTree(ori_sel).query(sim_sel, k=1)
        table[int(c)] = (float(np.mean(d)), int(len(sim_sel)))
    return table


def plane_distance(sim, point_on_plane, normal) -> float:
    """Mean unsigned distance to an analytic plane (ideal-surface reference)."""
    pts = _positions(sim)
    if len(pts) == 0:
        raise ValueError("empty cloud")
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    return float(np.mean(np.abs((pts - np.asarray(point_on_plane)) @ n)))


def density_stats(cloud, radius: float):
    """(mean, std, cv) of per-point neighbor counts within `radius`."""
    if not radius > 0:
        raise ValueError("radius must be > 0")
    pts = _positions(cloud)
    tree = cKDTree(pts)
    counts = np.array([len(lst) - 1 for lst in tree.query_ball_point(pts, radius)],
                      dtype=np.float64)
    mean = float(counts.mean())
    std = float(counts.std())
    cv = std / mean if mean > 0 else 0.0
    return mean, std, cv


def coverage_fraction(splats: SplatSet, cloud, tolerance: float) -> float:
    """Fraction of points lying on some splat's disk, within `tolerance`
    off-plane and inside the radius in-plane.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be > 0")
    pts = _positions(cloud)
    if len(pts) == 0:
        return 0.0
    if len(splats) == 0:
        return 0.0
    covered = np.zeros(len(pts), dtype=bool)
    tree = cKDTree(pts)
    for s in range(len(splats)):
        c = splats.centers[s]
        n = splats.normals[s]
        r = splats.radii[s]
        reach = float(np.hypot(r, tolerance))
        cand = np.asarray(tree.query_ball_point(c, reach), dtype=np.int64)
        if cand.size == 0:
            continue
        cand = cand[~covered[cand]]
        if cand.size == 0:
            continue
        v = pts[cand] - c
        off = v @ n
        ok = np.abs(off) <= tolerance
        if ok.any():
            inplane = v[ok] - off[ok, None] * n
            ok_idx = cand[ok][np.linalg.norm(inplane, axis=1) <= r]
            covered[ok_idx] = True
    return float(covered.mean())


@dataclass
class EvalReport:
    """Everything the eval stage measures, serializable to CSV."""

    c2c_mean: float
    per_class: dict[int, tuple] = field(default_factory=dict)
    density: tuple = (0.0, 0.0, 0.0)
    coverage: float | None = None
    primitive_count: int | None = None
    plane_c2c: float | None = None
    timings: dict[str, float] = field(default_factory=dict)

    def summary(self) -> str:
        lines = [f"c2c_mean_m {self.c2c_mean:.9f}"]
        if self.plane_c2c is not None:
            lines.append(f"plane_c2c_m {self.plane_c2c:.9e}")
        for c in sorted(self.per_class):
            mean, count = self.per_class[c]
            val = "absent" if mean is None else f"{mean:.9f}"
            lines.append(f"c2c_class_{c}_m {val} (n={count})")
        mean, std, cv = self.density
        lines.append(f"density mean={mean:.3f} std={std:.3f} cv={cv:.4f}")
        if self.coverage is not None:
            lines.append(f"coverage {self.coverage:.4f}")
        if self.primitive_count is not None:
            lines.append(f"primitives {self.primitive_count}")
        return "\n".join(lines)


def write_report_csv(report: EvalReport, path):
    """`metric,class,value,count` rows; absent per-class entries stay empty."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["metric", "class", "value", "count"])
        w.writerow(["c2c_mean", "", repr(report.c2c_mean), ""])
        if report.plane_c2c is not None:
            w.writerow(["plane_c2c", "", repr(report.plane_c2c), ""])
        for c in sorted(report.per_class):
            mean, count = report.per_class[c]
            w.writerow(["c2c_class", c, "" if mean is None else repr(mean), count])
        mean, std, cv = report.density
        w.writerow(["density_mean", "", repr(mean), ""])
        w.writerow(["density_std", "", repr(std), ""])
        w.writerow(["density_cv", "", repr(cv), ""])
        if report.coverage is not None:
            w.writerow(["coverage", "", repr(report.coverage), ""])
        if report.primitive_count is not None:
            w.writerow(["primitives", "", report.primitive_count, ""])


def write_timings_csv(timings: dict[str, float], path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["stage", "seconds"])
        for stage, seconds in timings.items():
            w.writerow([stage, f"{seconds:.6f}"])
