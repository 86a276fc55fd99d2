"""LUT and node variance estimation from path-pair difference statistics.

Pair differences cancel every component the two paths share, so the variance
of a pair's compensated difference is modelled as

    var(L, N) = L * var_lut + N * var_node

for L distinct LUTs and N distinct nodes.  Averaging pair variances within
each (L, N) subclass and differencing consecutive N subclasses of one L class
isolates the node variance; substituting it back gives the LUT variance.
Both are reported as the unweighted mean of the per-class means.
"""

import csv
import json
import math
import warnings
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import NegativeEstimateWarning, PufVarError
from .pairing import screen_subclasses

PAIR_CHUNK = 8192


@dataclass(frozen=True)
class PairDiffStats:
    j: int
    k: int
    u_pdcd: float
    sigma_pdcd: float
    var_pdcd: float


@dataclass(frozen=True)
class SubclassMean:
    L: int
    N: int
    n_pairs: int
    u_var: float


@dataclass
class VarianceEstimates:
    sigma2_node: float
    sigma2_lut: float
    per_class_node: dict
    per_class_lut: dict
    regression: dict
    three_sigma_lut: float
    three_sigma_node: float
    uncertainty_bound: float = float("nan")
    method: str = "class_means"
    warnings: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d["per_class_node"] = {str(k): v for k, v in sorted(self.per_class_node.items())}
        d["per_class_lut"] = {str(k): v for k, v in sorted(self.per_class_lut.items())}
        return d


# -- pair statistics -----------------------------------------------------------

def _pair_chunk(xt, pairs):
    d = xt[pairs[:, 0]] - xt[pairs[:, 1]]
    u = d.mean(axis=1)
    var = ((d - u[:, None]) ** 2).sum(axis=1) / (d.shape[1] - 1)
    return u, var


def pair_statistic_arrays(cds, pairs, threads=1, chunk=PAIR_CHUNK):
    """Mean and (n-1) variance of PDC_j - PDC_k over instances, for each row of ``pairs``.

    Work is split into fixed chunks and reassembled in order, so the result
    does not depend on ``threads``.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if cds.nc < 2:
        raise PufVarError("need at least two instances", code="INVALID_DATASET")
    if len(pairs) and (pairs.min() < 0 or pairs.max() >= cds.np):
        raise PufVarError("pair references a path outside the dataset", code="INVALID_PAIR")
    xt = np.ascontiguousarray(cds.pdc.T)
    starts = range(0, len(pairs), chunk)
    if threads > 1 and len(pairs) > chunk:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda s: _pair_chunk(xt, pairs[s:s + chunk]), starts))
    else:
        parts = [_pair_chunk(xt, pairs[s:s + chunk]) for s in starts]
    if not parts:
        return np.empty(0), np.empty(0)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def pair_statistics(cds, pairs, chunk=PAIR_CHUNK):
    """Yield PairDiffStats for each (j, k), computed a chunk at a time."""
    xt = np.ascontiguousarray(cds.pdc.T)
    buf = []
    for jk in pairs:
        buf.append(jk)
        if len(buf) == chunk:
            yield from _emit(xt, buf)
            buf = []
    if buf:
        yield from _emit(xt, buf)


def _emit(xt, buf):
    arr = np.asarray(buf, dtype=np.int64).reshape(-1, 2)
    u, var = _pair_chunk(xt, arr)
    for (j, k), a, v in zip(arr.tolist(), u.tolist(), var.tolist()):
        yield PairDiffStats(j, k, a, math.sqrt(v), v)


def subgroup_variances(cds, index, threads=1):
    """Per-member PDCD variances for every retained subgroup of ``index``."""
    pairs, keys = index.retained_pairs()
    _, var = pair_statistic_arrays(cds, pairs, threads)
    out, pos = {}, 0
    for key in keys:
        n = len(index.subgroups[key])
        out[key] = var[pos:pos + n]
        pos += n
    return out


def subclass_means(index, variances):
    """Mean pair variance of each included (L, N) subclass."""
    out = []
    for key in index.included():
        v = variances[key]
        out.append(SubclassMean(key[0], key[1], len(v), float(np.mean(v))))
    return out


# -- estimators ----------------------------------------------------------------

def _by_class(means):
    classes = defaultdict(dict)
    for m in means:
        classes[m.L][m.N] = m
    return classes


def _warn_negative(name, value, sink):
    if value < 0:
        msg = f"{name} estimate is negative ({value:.4g}); model assumptions violated"
        warnings.warn(msg, NegativeEstimateWarning, stacklevel=3)
        if sink is not None:
            sink.append(f"{NegativeEstimateWarning.code}: {msg}")


def node_differences(means):
    """Consecutive-N differences of subclass means, per L class."""
    diffs = {}
    for L, row in sorted(_by_class(means).items()):
        d = [row[n + 1].u_var - row[n].u_var for n in sorted(row) if n + 1 in row]
        if d:
            diffs[L] = d
    return diffs


def _class_weights(means):
    w = defaultdict(int)
    for m in means:
        w[m.L] += m.n_pairs
    return w


def _combine(per_class, weights, weighted):
    keys = sorted(per_class)
    vals = np.array([per_class[k] for k in keys])
    if weighted:
        w = np.array([weights[k] for k in keys], dtype=np.float64)
        return float((vals * w).sum() / w.sum())
    return float(vals.mean())


def estimate_node_variance(means, weighted=False, method="class_means", warn_sink=None):
    """Node variance from consecutive (N, N+1) subclass pairs within each L class.

    ``method="pooled"`` averages every difference in one pool instead of
    taking the mean of per-class means.  Gaps in N are skipped, not scaled.
    """
    diffs = node_differences(means)
    if not diffs:
        raise PufVarError("no L class has two included subclasses with consecutive N",
                          code="NO_CONSECUTIVE_SUBCLASSES")
    per_class = {L: float(np.mean(d)) for L, d in diffs.items()}
    if method == "pooled":
        sigma2 = float(np.mean([x for d in diffs.values() for x in d]))
    elif method == "class_means":
        sigma2 = _combine(per_class, _class_weights(means), weighted)
    else:
        raise ValueError(f"unknown method {method!r}")
    _warn_negative("node variance", sigma2, warn_sink)
    return per_class, sigma2


def measurement_noise_floor(noise_sigma, delta_t, samples):
    """Pair-variance contribution of strobe noise and quantization: each path
    carries (noise^2 + delta_t^2/12)/samples, and a pair has two paths."""
    return 2.0 * (noise_sigma ** 2 + delta_t ** 2 / 12.0) / samples


def estimate_lut_variance(means, sigma2_node, weighted=False, classes=None, warn_sink=None, noise_floor=0.0):
    """LUT variance as (u_var - N * node variance) / L, averaged per class then across classes.

    ``classes`` restricts the average to the given L classes (by default the
    classes that contributed a node estimate, i.e. had consecutive subclasses).
    ``noise_floor`` (default 0) is a constant per-pair measurement variance
    removed from every subclass mean first; node differences cancel it anyway.
    """
    if not math.isfinite(sigma2_node):
        raise PufVarError("node variance must be finite", code="INVALID_PARAMS")
    per = defaultdict(list)
    for m in means:
        if classes is None or m.L in classes:
            per[m.L].append((m.u_var - noise_floor - m.N * sigma2_node) / m.L)
    if not per:
        raise PufVarError("no subclasses to estimate LUT variance from", code="NO_CONSECUTIVE_SUBCLASSES")
    per_class = {L: float(np.mean(v)) for L, v in sorted(per.items())}
    sigma2 = _combine(per_class, _class_weights(means), weighted)
    _warn_negative("LUT variance", sigma2, warn_sink)
    return per_class, sigma2


def fit_regression(means):
    """Ordinary least squares of subclass mean variance on total distinct components (L + N)."""
    x = np.array([m.L + m.N for m in means], dtype=np.float64)
    y = np.array([m.u_var for m in means], dtype=np.float64)
    if len(x) < 2:
        raise PufVarError("need at least two points for a regression", code="SINGULAR_FIT")
    xc = x - x.mean()
    sxx = float((xc * xc).sum())
    if sxx == 0.0:
        raise PufVarError("all regression x values are equal", code="SINGULAR_FIT")
    slope = float((xc * (y - y.mean())).sum() / sxx)
    intercept = float(y.mean() - slope * x.mean())
    out = {"slope": slope, "intercept": intercept, "n": len(x),
           "slope_se": float("nan"), "intercept_se": float("nan")}
    if len(x) > 2:
        resid = y - (intercept + slope * x)
        s2 = float((resid ** 2).sum() / (len(x) - 2))
        out["slope_se"] = math.sqrt(s2 / sxx)
        out["intercept_se"] = math.sqrt(s2 * (1.0 / len(x) + x.mean() ** 2 / sxx))
    return out


def predicted_variance(luts, nodes, sigma2_lut, sigma2_node):
    return luts * sigma2_lut + nodes * sigma2_node


def predict_threesigma(lut_count_sum, node_count_sum, sigma2_lut, sigma2_node):
    """ThreeSigma (ps) of a path or path difference with the given component totals."""
    v = predicted_variance(lut_count_sum, node_count_sum, sigma2_lut, sigma2_node)
    return 3.0 * math.sqrt(v)


def three_sigma(variance):
    return 3.0 * math.sqrt(variance) if variance >= 0 else float("nan")


def uncertainty_ratio(class_aggs, sigma2_lut, sigma2_node):
    """Largest variance-of-variances over included LUT-node classes, relative to the
    variance predicted for that class's average composition."""
    pool = [a for a in class_aggs if a.included] or list(class_aggs)
    worst = max(pool, key=lambda a: a.var_of_var)
    pred = predicted_variance(worst.mean_luts, worst.mean_nodes, sigma2_lut, sigma2_node)
    return {"m": worst.m, "var_of_var": worst.var_of_var, "mean_luts": worst.mean_luts,
            "mean_nodes": worst.mean_nodes, "predicted": pred, "ratio": worst.var_of_var / pred}


# -- driver --------------------------------------------------------------------

@dataclass
class Decomposition:
    estimates: VarianceEstimates
    means: list
    index: object
    variances: dict = field(repr=False, default=None)


def decompose(cds, index, min_members=200, outlier_k=math.inf, weighted=False, method="class_means",
              class_aggs=None, threads=1, noise_floor=0.0):
    """Screen subclasses, compute subclass means and estimate both variances.

    Outlier screening is off by default (``outlier_k=inf``); pass 3.0 for the
    strict leave-one-out rule.
    """
    variances = subgroup_variances(cds, index, threads)
    screened = screen_subclasses(index, variances, min_members, outlier_k)
    means = subclass_means(screened, variances)
    notes = []
    per_node, s2n = estimate_node_variance(means, weighted, method, notes)
    per_lut, s2l = estimate_lut_variance(means, s2n, weighted, classes=set(per_node), warn_sink=notes,
                                         noise_floor=noise_floor)
    used = [m for m in means if m.L in per_node]
    try:
        reg = fit_regression(used)
    except PufVarError as exc:
        notes.append(str(exc))
        reg = {"slope": float("nan"), "intercept": float("nan"), "n": len(used),
               "slope_se": float("nan"), "intercept_se": float("nan")}
    est = VarianceEstimates(s2n, s2l, per_node, per_lut, reg, three_sigma(s2l), three_sigma(s2n),
                            method=method if not weighted else method + "+weighted", warnings=notes)
    if class_aggs:
        est.uncertainty_bound = uncertainty_ratio(class_aggs, s2l, s2n)["ratio"]
    return Decomposition(est, means, screened, variances)


# -- files -----------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, float):
        return None if not math.isfinite(obj) else round(obj, 10)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def estimates_document(result):
    est = result.estimates
    doc = est.to_dict()
    doc["subclass_means"] = [asdict(m) for m in result.means]
    doc["node_differences"] = {str(L): d for L, d in node_differences(
        [m for m in result.means if m.L in est.per_class_node]).items()}
    return _clean(doc)


def write_estimates(result, out_dir):
    out_dir = Path(out_dir)
    (out_dir / "estimates.json").write_text(json.dumps(estimates_document(result), indent=2, sort_keys=True) + "\n")
    with open(out_dir / "subclass_means.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["L", "N", "n_pairs", "u_var"])
        for m in result.means:
            w.writerow([m.L, m.N, m.n_pairs, f"{m.u_var:.6f}"])
    est = result.estimates
    with open(out_dir / "node_analysis.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ordinal", "L", "N", "measured_u_var", "predicted_u_var"])
        used = [m for m in result.means if m.L in est.per_class_node]
        for i, m in enumerate(used):
            pred = predicted_variance(m.L, m.N, est.sigma2_lut, est.sigma2_node)
            w.writerow([i, m.L, m.N, f"{m.u_var:.6f}", f"{pred:.6f}"])
