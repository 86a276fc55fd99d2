"""Per-path variation across instances and LUT-node class aggregates."""

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PathVarianceRecord:
    path_id: int
    u_pdc: float
    sigma_pdc: float
    var_pdc: float
    three_sigma: float
    class_m: int


@dataclass(frozen=True)
class ClassAggregate:
    m: int
    n_paths: int
    mean_var: float
    var_of_var: float
    included: bool
    mean_luts: float = float("nan")
    mean_nodes: float = float("nan")


def column_moments(x):
    """Mean, (n-1) std and variance of each column of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("need at least two rows")
    u = x.mean(axis=0)
    var = ((x - u) ** 2).sum(axis=0) / (x.shape[0] - 1)
    return u, np.sqrt(var), var


def path_statistics(cds, design=None):
    """Mean, spread and ThreeSigma of every path's compensated delay."""
    u, sigma, _ = column_moments(cds.pdc)
    var = sigma ** 2
    classes = design.classes() if design is not None else np.zeros(len(u), dtype=np.int64)
    return [PathVarianceRecord(j, float(u[j]), float(sigma[j]), float(var[j]), float(3.0 * sigma[j]),
                               int(classes[j]))
            for j in range(len(u))]


def deviations(cds, path_ids=None):
    """Compensated delay variations about each path's mean, shape (nc, paths)."""
    x = cds.pdc if path_ids is None else cds.pdc[:, list(path_ids)]
    return x - x.mean(axis=0)


def class_aggregates(records, class_min=300, design=None):
    """Average path variance per LUT-node class, and the variance of those variances.

    Classes with fewer than ``class_min`` paths are kept but marked excluded.
    """
    if not records:
        raise ValueError("no path records")
    ms = np.array([r.class_m for r in records])
    var = np.array([r.var_pdc for r in records])
    luts = nodes = None
    if design is not None:
        luts = design.lut_counts()[[r.path_id for r in records]]
        nodes = design.node_counts()[[r.path_id for r in records]]
    out = []
    for m in np.unique(ms):
        sel = ms == m
        v = var[sel]
        vv = float(v.var(ddof=1)) if len(v) > 1 else 0.0
        out.append(ClassAggregate(
            int(m), int(sel.sum()), float(v.mean()), vv, bool(sel.sum() >= class_min),
            float(luts[sel].mean()) if luts is not None else float("nan"),
            float(nodes[sel].mean()) if nodes is not None else float("nan")))
    return out


def predicted_variance_line(sigma2_lut, sigma2_node, lut_fraction):
    """Per-component variance slope of single-path variance vs LUT-node class.

    The line is forced through the origin.
    """
    if not 0.0 <= lut_fraction <= 1.0:
        raise ValueError("lut_fraction must lie in [0, 1]")
    slope = lut_fraction * sigma2_lut + (1.0 - lut_fraction) * sigma2_node
    return {"slope": slope, "intercept": 0.0}


def design_lut_fraction(design):
    luts = design.lut_counts().sum()
    return float(luts / (luts + design.node_counts().sum()))


def histogram(values, bin_width=10.0):
    """Fixed-width histogram with bins aligned to multiples of ``bin_width``."""
    values = np.asarray(values, dtype=np.float64)
    lo = np.floor(values.min() / bin_width) * bin_width
    hi = np.floor(values.max() / bin_width) * bin_width + bin_width
    edges = np.arange(lo, hi + bin_width / 2, bin_width)
    counts, _ = np.histogram(values, bins=edges)
    return edges[:-1], counts


def write_path_stats(records, dest):
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "m", "u", "sigma", "var", "three_sigma"])
        for r in records:
            w.writerow([r.path_id, r.class_m, f"{r.u_pdc:.6f}", f"{r.sigma_pdc:.6f}",
                        f"{r.var_pdc:.6f}", f"{r.three_sigma:.6f}"])


def write_class_agg(aggs, dest):
    """Class table; the trailing mean_luts/mean_nodes columns give each class's
    average composition (nan when no design was supplied)."""
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "n_paths", "mean_var", "var_of_var", "included", "mean_luts", "mean_nodes"])
        for a in aggs:
            w.writerow([a.m, a.n_paths, f"{a.mean_var:.6f}", f"{a.var_of_var:.6f}", int(a.included),
                        f"{a.mean_luts:.6f}", f"{a.mean_nodes:.6f}"])


def read_class_agg(src):
    out = []
    with open(src, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(ClassAggregate(
                int(row["m"]), int(row["n_paths"]), float(row["mean_var"]), float(row["var_of_var"]),
                bool(int(row["included"])), float(row.get("mean_luts", "nan")),
                float(row.get("mean_nodes", "nan"))))
    return out


def write_histograms(cds, path_ids, dest, bin_width=10.0):
    """Histogram of K = PDC - mean for selected paths, one block per path."""
    k = deviations(cds, path_ids)
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "bin_lo", "count"])
        for col, pid in enumerate(path_ids):
            lo, counts = histogram(k[:, col], bin_width)
            for a, n in zip(lo, counts):
                w.writerow([pid, f"{a:.1f}", int(n)])

