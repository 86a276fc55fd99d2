"""End-to-end run: design -> simulate -> compensate -> path stats -> pairing
-> decomposition -> bitstrings -> report.

Every step writes its files into one output directory; ``build_report``
reads them back, so the report can also be regenerated from a directory
produced by the individual subcommands.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import bitgen, compensation, decomposition, fabric, pairing, pathstats, simulator
from .errors import PufVarError

PUBLISHED = {
    "sigma2_lut": 25.38,
    "sigma2_node": 16.83,
    "three_sigma_lut": 15.1,
    "three_sigma_node": 12.3,
}
# (LUTs, nodes) totals behind the published ThreeSigma predictions
PREDICTION_CASES = {
    "l34_n189": (34, 189),
    "l36_n205": (36, 205),
    "l32_n180": (32, 180),
    "mean_path": (16.5, 86.9),
}
DEFAULT_L_CLASSES = tuple(range(6, 27, 2))
DESIGN_FILE = "design.paths.jsonl"
DATASET_FILE = "dataset.csv"


@dataclass
class PipelineConfig:
    seed: int = 1
    nc: int = 100
    preset: str = "desk"
    design: dict = field(default_factory=dict)
    truth: simulator.GroundTruth = field(default_factory=simulator.GroundTruth)
    units: str = simulator.PS
    l_classes: tuple = DEFAULT_L_CLASSES
    min_members: int = 200
    outlier_k: float = math.inf
    class_min: int = 300
    weighted: bool = False
    method: str = "class_means"
    multiset_nodes: bool = False
    capacity: int = pairing.DEFAULT_CAPACITY
    noise_floor: float = 0.0  # ps^2 per pair, removed before the LUT estimate
    n_bits: int = bitgen.DEFAULT_PAIRS
    modulus: float = bitgen.DEFAULT_MODULUS
    threads: int = 1


def design_params(preset="desk", seed=1, **overrides):
    if preset not in fabric.PRESETS:
        raise PufVarError(f"unknown preset {preset!r}", code="INVALID_PARAMS")
    kw = dict(fabric.PRESETS[preset])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    kw["seed"] = seed
    return fabric.DesignParams(**kw)


# -- steps ---------------------------------------------------------------------

def step_design(params, out_dir):
    design = fabric.generate_design(params)
    fabric.write_design(design, Path(out_dir) / DESIGN_FILE)
    return design


def step_simulate(design, truth, nc, seed, out_dir, threads=1):
    ds = simulator.simulate(design, truth, nc, seed, threads)
    simulator.write_dataset(ds, Path(out_dir) / DATASET_FILE)
    return ds


def step_compensate(ds, units, out_dir):
    cds = compensation.compensate(ds, units=units)
    compensation.write_compensation(cds, out_dir)
    return cds


def representative_paths(design):
    """Shortest, median and longest path by LUT-node class (first of each)."""
    classes = design.classes()
    order = np.argsort(classes, kind="stable")
    return sorted({int(order[0]), int(order[len(order) // 2]), int(order[-1])})


def step_pathstats(cds, design, class_min, out_dir):
    out_dir = Path(out_dir)
    records = pathstats.path_statistics(cds, design)
    aggs = pathstats.class_aggregates(records, class_min, design)
    pathstats.write_path_stats(records, out_dir / "path_stats.csv")
    pathstats.write_class_agg(aggs, out_dir / "class_agg.csv")
    if cds.nc >= 2:
        pathstats.write_histograms(cds, representative_paths(design), out_dir / "histograms.csv")
    return records, aggs


def step_pair(design, cfg, out_dir):
    out_dir = Path(out_dir)
    index = pairing.build_index(design, cfg.l_classes, cfg.min_members, cfg.capacity,
                                cfg.multiset_nodes, cfg.threads)
    pairing.write_census(index, out_dir / "pair_census.csv")
    bins = out_dir / "pairs"
    bins.mkdir(exist_ok=True)
    pairing.write_pair_bins(index, bins)
    return index


def step_decompose(cds, index, cfg, class_aggs, out_dir):
    floor = cfg.noise_floor
    if cds.units == simulator.FPS:
        floor = floor / cds.delta_t ** 2
    result = decomposition.decompose(cds, index, cfg.min_members, cfg.outlier_k, cfg.weighted,
                                     cfg.method, class_aggs, cfg.threads, floor)
    decomposition.write_estimates(result, out_dir)
    pairing.write_census(result.index, Path(out_dir) / "pair_census.csv")
    return result


def step_bitgen(cds, design, n_bits, modulus, seed, out_dir, multiset_nodes=False):
    out_dir = Path(out_dir)
    index = pairing.build_index(design, None, 0, multiset_nodes=multiset_nodes)
    pairs = bitgen.sample_pairs(index, n_bits, seed)
    cds_fps = cds.to_units(simulator.FPS)
    helper = bitgen.provision(cds_fps, pairs, modulus)
    bitgen.write_helper(helper, out_dir / "helper.json")
    # regenerate from the stored (rounded) helper data, as a field device would
    helper = bitgen.read_helper(out_dir / "helper.json")
    bits = bitgen.generate_all(cds_fps, helper)
    bit_dir = out_dir / "bits"
    bit_dir.mkdir(exist_ok=True)
    bitgen.write_bits(bits, bit_dir)
    report = bitgen.quality_report(bits)
    bitgen.write_quality(report, out_dir / "quality.json")
    return helper, bits, report


def run(cfg, out_dir):
    """Run every step into ``out_dir`` and write report.md / report.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = design_params(cfg.preset, cfg.seed, **cfg.design)
    design = step_design(params, out_dir)
    ds = step_simulate(design, cfg.truth, cfg.nc, cfg.seed, out_dir, cfg.threads)
    cds = step_compensate(ds, cfg.units, out_dir)
    _, aggs = step_pathstats(cds, design, cfg.class_min, out_dir)
    index = step_pair(design, cfg, out_dir)
    step_decompose(cds, index, cfg, aggs, out_dir)
    step_bitgen(cds, design, cfg.n_bits, cfg.modulus, cfg.seed, out_dir, cfg.multiset_nodes)
    write_run_info(cfg, params, design, out_dir)
    return write_report(out_dir)


def write_run_info(cfg, params, design, out_dir):
    doc = {
        "seed": cfg.seed,
        "nc": cfg.nc,
        "preset": cfg.preset,
        "design_params": asdict(params),
        "npr": design.npr,
        "npf": design.npf,
        "total_pairings": pairing.count_pairings(design.npr, design.npf),
        "l_classes": list(cfg.l_classes) if cfg.l_classes is not None else None,
        "min_members": cfg.min_members,
        "outlier_k": cfg.outlier_k if math.isfinite(cfg.outlier_k) else None,
        "class_min": cfg.class_min,
        "noise_floor": cfg.noise_floor,
    }
    (Path(out_dir) / "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- report --------------------------------------------------------------------

def _load_json(path):
    return json.loads(path.read_text()) if path.exists() else None


def _r(x, nd=10):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    return round(float(x), nd)


def build_report(out_dir):
    """Collate a run directory into a deterministic report document.

    Variances are reported in ps^2; FPS-unit estimates are converted with
    the dataset's delta_t.
    """
    out_dir = Path(out_dir)
    est = _load_json(out_dir / "estimates.json")
    if est is None:
        raise PufVarError(f"{out_dir}/estimates.json not found", code="MISSING_INPUT")
    comp = _load_json(out_dir / "compensation.json") or {}
    scale = 1.0
    if comp.get("units") == simulator.FPS:
        scale = comp["delta_t"] ** 2
    s2l = est["sigma2_lut"] * scale if est["sigma2_lut"] is not None else float("nan")
    s2n = est["sigma2_node"] * scale if est["sigma2_node"] is not None else float("nan")

    truth = _load_json(out_dir / "truth.json")
    rows = []
    for name, est_v in (("sigma2_lut", s2l), ("sigma2_node", s2n),
                        ("three_sigma_lut", decomposition.three_sigma(s2l)),
                        ("three_sigma_node", decomposition.three_sigma(s2n))):
        injected = None
        if truth is not None:
            base = truth[name.replace("three_sigma", "sigma2")]
            injected = base if name.startswith("sigma2") else 3.0 * math.sqrt(base)
        rel = (est_v / injected - 1.0) if injected else None
        rows.append({"quantity": name, "estimated": _r(est_v, 6), "injected": _r(injected, 6),
                     "published": PUBLISHED[name], "relative_error": _r(rel, 6)})

    predictions = {}
    for key, (luts, nodes) in PREDICTION_CASES.items():
        predictions[key] = {
            "luts": luts, "nodes": nodes,
            "estimated": _r(decomposition.predict_threesigma(luts, nodes, s2l, s2n), 6)
            if s2l >= 0 and s2n >= 0 else None,
            "published_values": _r(decomposition.predict_threesigma(luts, nodes, PUBLISHED["sigma2_lut"],
                                                                PUBLISHED["sigma2_node"]), 6),
        }

    report = {
        "comparison": rows,
        "regression": {k: v if k == "n" else _r(None if v is None else v * scale, 6)
                       for k, v in est["regression"].items()},
        "per_class_node": {k: _r(v * scale, 6) for k, v in est["per_class_node"].items()},
        "per_class_lut": {k: _r(v * scale, 6) for k, v in est["per_class_lut"].items()},
        "method": est["method"],
        "warnings": est["warnings"],
        "predictions_three_sigma": predictions,
        "units_note": "variances in ps^2, ThreeSigma in ps",
    }

    agg_path = out_dir / "class_agg.csv"
    if agg_path.exists():
        aggs = pathstats.read_class_agg(agg_path)
        aggs_ps = [pathstats.ClassAggregate(a.m, a.n_paths, a.mean_var * scale, a.var_of_var * scale ** 2,
                                            a.included, a.mean_luts, a.mean_nodes) for a in aggs]
        report["classes"] = {"count": len(aggs), "included": sum(a.included for a in aggs),
                             "paths": sum(a.n_paths for a in aggs)}
        if all(math.isfinite(a.mean_luts) for a in aggs_ps) and s2l >= 0 and s2n >= 0:
            u = decomposition.uncertainty_ratio(aggs_ps, s2l, s2n)
            report["uncertainty"] = {k: _r(v, 6) for k, v in u.items()}
            report["uncertainty"]["m"] = u["m"]

    census_path = out_dir / "pair_census.csv"
    if census_path.exists():
        with open(census_path, newline="") as fh:
            census = list(csv.DictReader(fh))
        report["pairing"] = {
            "admissible_pairs": sum(int(r["members"]) for r in census),
            "subclasses": len(census),
            "included_subclasses": sum(int(r["included"]) for r in census),
        }
    run_info = _load_json(out_dir / "run.json")
    if run_info is not None:
        report["run"] = run_info
    quality = _load_json(out_dir / "quality.json")
    if quality is not None:
        report["bitstrings"] = {k: quality[k] for k in ("n_instances", "n_bits", "mean_interchip_hd_pct",
                                                         "bit_frequency_mean")}
    if truth is not None:
        report["truth"] = truth
    return report


def render_markdown(report):
    lines = ["# Variance decomposition report", ""]
    lines += ["| quantity | estimated | injected | published | rel. error |",
              "|---|---|---|---|---|"]
    for r in report["comparison"]:
        fmt = lambda v: "n/a" if v is None else f"{v:.4g}"
        rel = "n/a" if r["relative_error"] is None else f"{100 * r['relative_error']:+.2f}%"
        lines.append(f"| {r['quantity']} | {fmt(r['estimated'])} | {fmt(r['injected'])} | "
                     f"{r['published']} | {rel} |")
    lines += ["", report["units_note"], "", "## ThreeSigma predictions (ps)", "",
              "| case | LUTs | nodes | estimated | with published variances |", "|---|---|---|---|---|"]
    for key, p in report["predictions_three_sigma"].items():
        est = "n/a" if p["estimated"] is None else f"{p['estimated']:.1f}"
        lines.append(f"| {key} | {p['luts']} | {p['nodes']} | {est} | {p['published_values']:.1f} |")
    reg = report["regression"]
    lines += ["", "## Regression of subclass means on L + N", "",
              f"slope {reg['slope']}, intercept {reg['intercept']} (se {reg['intercept_se']}), "
              f"{reg['n']} subclasses", ""]
    lines += ["## Per-class estimates (ps^2)", "", "| L | node | LUT |", "|---|---|---|"]
    for L in sorted(report["per_class_node"], key=int):
        lines.append(f"| {L} | {report['per_class_node'][L]} | {report['per_class_lut'].get(L)} |")
    if "uncertainty" in report:
        u = report["uncertainty"]
        lines += ["", "## Uncertainty", "",
                  f"worst variance-of-variances class m={u['m']}: {u['var_of_var']} ps^4 vs predicted "
                  f"variance {u['predicted']} ps^2, ratio {u['ratio']}"]
    if "pairing" in report:
        p = report["pairing"]
        lines += ["", "## Pairing", "",
                  f"{p['admissible_pairs']} admissible pairs in {p['subclasses']} subclasses, "
                  f"{p['included_subclasses']} included"]
    if "bitstrings" in report:
        b = report["bitstrings"]
        lines += ["", "## Bitstrings", "",
                  f"{b['n_instances']} instances x {b['n_bits']} bits: inter-chip HD "
                  f"{b['mean_interchip_hd_pct']:.2f}%, bit frequency {b['bit_frequency_mean']:.4f}"]
    if report["warnings"]:
        lines += ["", "## Warnings", ""] + [f"- {w}" for w in report["warnings"]]
    return "\n".join(lines) + "\n"


def write_report(out_dir):
    out_dir = Path(out_dir)
    report = build_report(out_dir)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out_dir / "report.md").write_text(render_markdown(report))
    return report
