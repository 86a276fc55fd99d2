"""Command-line entry point: one subcommand per pipeline step plus ``pipeline``.

Settings resolve as command-line flag > config file > built-in default.  The
config file is TOML; top-level keys apply to every subcommand and a table
named after a subcommand (e.g. ``[simulate]``) overrides them for that one.
Input files default to the standard names inside ``--out-dir``, so the
subcommands chain without extra flags.

Exit codes: 0 success, 2 validation error (stable code on stderr), 1 internal.
"""

import argparse
import math
import sys
import traceback
from pathlib import Path

from . import bitgen, compensation, fabric, pairing, pathstats, pipeline, simulator
from .errors import PufVarError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

# dest -> (default, type); every option registered below appears here
DEFAULTS = {
    "seed": (1, int),
    "threads": (1, int),
    "out_dir": (".", str),
    "units": ("ps", str),
    # gen-design
    "preset": ("desk", str),
    "n_inputs": (None, int),
    "n_layers": (None, int),
    "luts_per_layer": (None, int),
    "fanin": (None, int),
    "fanout": (None, int),
    "nodes_min": (None, int),
    "nodes_max": (None, int),
    "target_path_count": (None, int),
    "n_outputs": (None, int),
    "skip_prob": (None, float),
    # simulate
    "nc": (100, int),
    "sigma2_lut": (25.38, float),
    "sigma2_node": (16.83, float),
    "heterogeneity": (0.0, float),
    "chip_gain_sigma": (0.03, float),
    "chip_offset_sigma": (10.0, float),
    "noise_sigma": (9.0, float),
    "samples": (16, int),
    "delta_t": (18.0, float),
    # pathstats / pair / decompose
    "class_min": (300, int),
    "l_classes": ("6-26", str),
    "min_members": (200, int),
    "capacity": (pairing.DEFAULT_CAPACITY, int),
    "multiset_nodes": (False, bool),
    "outlier_k": (math.inf, float),
    "weighted": (False, bool),
    "noise_floor": (0.0, float),
    "method": ("class_means", str),
    # bitgen
    "n_bits": (bitgen.DEFAULT_PAIRS, int),
    "modulus": (bitgen.DEFAULT_MODULUS, float),
    # input files
    "design": (None, str),
    "dataset": (None, str),
    "pdc": (None, str),
    "compensation": (None, str),
    "census": (None, str),
    "pairs_dir": (None, str),
    "class_agg": (None, str),
}


def parse_l_classes(text):
    """``"6-26"`` (even values in range), ``"6,8,10"``, or ``"all"``."""
    text = str(text).strip()
    if text == "all":
        return None
    out = set()
    try:
        for part in text.split(","):
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-"))
                out.update(v for v in range(lo, hi + 1) if v % 2 == 0)
            elif part:
                out.add(int(part))
    except ValueError:
        raise PufVarError(f"bad L class list {text!r}", code="INVALID_PARAMS") from None
    return tuple(sorted(out))


class Settings:
    """Resolved view of argparse results, config file values and defaults."""

    def __init__(self, args, config):
        self._args = args
        self._config = config

    def __getattr__(self, name):
        v = getattr(self._args, name, None)
        if v is not None:
            return v
        if name in self._config:
            default, typ = DEFAULTS.get(name, (None, None))
            v = self._config[name]
            return typ(v) if typ is not None and v is not None else v
        if name not in DEFAULTS:
            raise AttributeError(name)
        return DEFAULTS[name][0]

    def path(self, name, standard):
        v = getattr(self, name)
        return Path(v) if v is not None else Path(self.out_dir) / standard


def load_config(path, command):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise PufVarError(f"{path}: {exc}", code="PARSE_ERROR") from None
    flat = {k.replace("-", "_"): v for k, v in doc.items() if not isinstance(v, dict)}
    section = doc.get(command, {})
    if isinstance(section, dict):
        flat.update({k.replace("-", "_"): v for k, v in section.items()})
    unknown = sorted(set(flat) - set(DEFAULTS))
    if unknown:
        raise PufVarError(f"{path}: unknown setting(s) {', '.join(unknown)}", code="INVALID_PARAMS")
    return flat


# -- helpers -------------------------------------------------------------------

def _units(s):
    u = s.units.upper()
    if u not in (simulator.PS, simulator.FPS):
        raise PufVarError(f"units must be ps or fps, got {s.units!r}", code="INVALID_PARAMS")
    return u


def _truth(s):
    return simulator.GroundTruth(
        sigma2_lut=s.sigma2_lut, sigma2_node=s.sigma2_node, heterogeneity=s.heterogeneity,
        chip_gain_sigma=s.chip_gain_sigma, chip_offset_sigma=s.chip_offset_sigma,
        noise_sigma=s.noise_sigma, samples_per_measurement=s.samples, delta_t=s.delta_t)


def _design_overrides(s):
    kw = {k: getattr(s, k) for k in ("n_inputs", "n_layers", "luts_per_layer", "fanin", "fanout",
                                     "target_path_count", "n_outputs", "skip_prob")}
    if s.nodes_min is not None or s.nodes_max is not None:
        lo, hi = fabric.DesignParams().nodes_per_segment_range
        kw["nodes_per_segment_range"] = (s.nodes_min or lo, s.nodes_max or hi)
    return {k: v for k, v in kw.items() if v is not None}


def _config(s):
    return pipeline.PipelineConfig(
        seed=s.seed, nc=s.nc, preset=s.preset, design=_design_overrides(s), truth=_truth(s),
        units=_units(s), l_classes=parse_l_classes(s.l_classes), min_members=s.min_members,
        outlier_k=s.outlier_k, class_min=s.class_min, weighted=s.weighted, method=s.method,
        multiset_nodes=s.multiset_nodes, capacity=s.capacity, noise_floor=s.noise_floor,
        n_bits=s.n_bits, modulus=s.modulus, threads=s.threads)


def _out(s):
    out = Path(s.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_design(s):
    return fabric.parse_design(s.path("design", pipeline.DESIGN_FILE))


def _read_cds(s):
    cds = compensation.read_compensation(s.path("pdc", "pdc.csv"),
                                         s.path("compensation", "compensation.json"))
    return cds


def _say(msg):
    print(msg)


# -- commands ------------------------------------------------------------------

def cmd_gen_design(s):
    out = _out(s)
    params = pipeline.design_params(s.preset, s.seed, **_design_overrides(s))
    design = fabric.generate_design(params)
    dest = s.path("design", pipeline.DESIGN_FILE) if s.design else out / pipeline.DESIGN_FILE
    fabric.write_design(design, dest)
    _say(f"{dest}: {design.npr} rising, {design.npf} falling paths")
    return 0


def cmd_simulate(s):
    out = _out(s)
    design = _read_design(s)
    ds = pipeline.step_simulate(design, _truth(s), s.nc, s.seed, out, s.threads)
    _say(f"{out / pipeline.DATASET_FILE}: {ds.nc} instances x {ds.np} paths")
    return 0


def cmd_compensate(s):
    out = _out(s)
    ds = simulator.read_dataset(s.path("dataset", pipeline.DATASET_FILE))
    cds = pipeline.step_compensate(ds, _units(s), out)
    _say(f"u_ref {cds.reference.u_ref:.4f} sigma_ref {cds.reference.sigma_ref:.4f} {cds.units}")
    return 0


def cmd_pathstats(s):
    out = _out(s)
    _, aggs = pipeline.step_pathstats(_read_cds(s), _read_design(s), s.class_min, out)
    _say(f"{len(aggs)} LUT-node classes, {sum(a.included for a in aggs)} included")
    return 0


def cmd_pair(s):
    out = _out(s)
    index = pipeline.step_pair(_read_design(s), _config(s), out)
    retained = sum(len(v) for v in index.subgroups.values())
    _say(f"{sum(index.census.values())} admissible of {index.total_pairings} pairings; "
         f"{retained} retained in {len(index.subgroups)} subgroups")
    return 0


def cmd_decompose(s):
    out = _out(s)
    cfg = _config(s)
    cds = _read_cds(s)
    design = fabric.parse_design(s.path("design", pipeline.DESIGN_FILE)) \
        if s.path("design", pipeline.DESIGN_FILE).exists() else None
    index = pairing.read_index(s.path("census", "pair_census.csv"), s.path("pairs_dir", "pairs"),
                               design.npr if design else 0, design.npf if design else 0, cfg.min_members)
    agg_path = s.path("class_agg", "class_agg.csv")
    aggs = pathstats.read_class_agg(agg_path) if agg_path.exists() else None
    if aggs and not all(math.isfinite(a.mean_luts) for a in aggs):
        aggs = None
    result = pipeline.step_decompose(cds, index, cfg, aggs, out)
    e = result.estimates
    _say(f"sigma2_node {e.sigma2_node:.4f} sigma2_lut {e.sigma2_lut:.4f} ({cds.units}^2)")
    return 0


def cmd_bitgen(s):
    out = _out(s)
    _, _, q = pipeline.step_bitgen(_read_cds(s), _read_design(s), s.n_bits, s.modulus, s.seed, out,
                                   s.multiset_nodes)
    _say(f"inter-chip HD {q['mean_interchip_hd_pct']:.2f}%, bit frequency {q['bit_frequency_mean']:.4f}")
    return 0


def cmd_report(s):
    out = Path(s.out_dir)
    pipeline.write_report(out)
    _say(f"{out / 'report.md'}")
    return 0


def cmd_pipeline(s):
    report = pipeline.run(_config(s), s.out_dir)
    for row in report["comparison"][:2]:
        _say(f"{row['quantity']}: estimated {row['estimated']} injected {row['injected']}")
    _say(f"{Path(s.out_dir) / 'report.md'}")
    return 0


COMMANDS = {
    "gen-design": (cmd_gen_design, "generate a synthetic design"),
    "simulate": (cmd_simulate, "simulate delay measurements for a design"),
    "compensate": (cmd_compensate, "remove chip-to-chip variation"),
    "pathstats": (cmd_pathstats, "per-path variances and LUT-node class aggregates"),
    "pair": (cmd_pair, "pairing census and subgroup member lists"),
    "decompose": (cmd_decompose, "estimate LUT and node variances"),
    "bitgen": (cmd_bitgen, "helper data, bitstrings and quality metrics"),
    "report": (cmd_report, "collate a run directory into report.md/report.json"),
    "pipeline": (cmd_pipeline, "run every step"),
}

# options per command, beyond the global ones
OPTIONS = {
    "gen-design": ["preset", "n_inputs", "n_layers", "luts_per_layer", "fanin", "fanout", "nodes_min",
                   "nodes_max", "target_path_count", "n_outputs", "skip_prob", "design"],
    "simulate": ["design", "nc", "sigma2_lut", "sigma2_node", "heterogeneity", "chip_gain_sigma",
                 "chip_offset_sigma", "noise_sigma", "samples", "delta_t"],
    "compensate": ["dataset"],
    "pathstats": ["pdc", "compensation", "design", "class_min"],
    "pair": ["design", "l_classes", "min_members", "capacity", "multiset_nodes"],
    "decompose": ["pdc", "compensation", "design", "census", "pairs_dir", "class_agg", "min_members",
                  "outlier_k", "weighted", "method", "noise_floor"],
    "bitgen": ["pdc", "compensation", "design", "n_bits", "modulus", "multiset_nodes"],
    "report": [],
}
OPTIONS["pipeline"] = sorted({o for k, v in OPTIONS.items() for o in v}
                             - {"design", "dataset", "pdc", "compensation", "census", "pairs_dir", "class_agg"})

HELP = {
    "preset": "design size preset (desk or full)",
    "nodes_min": "fewest nodes per segment",
    "nodes_max": "most nodes per segment",
    "target_path_count": "paths sampled per polarity",
    "nc": "number of PUF instances",
    "samples": "strobe samples averaged per measurement",
    "l_classes": "L classes kept for estimation, e.g. 6-26, 6,8,10 or all",
    "min_members": "minimum members for a subclass to be included",
    "outlier_k": "leave-one-out outlier threshold in std devs (inf disables)",
    "weighted": "weight class means by membership",
    "method": "node estimator: class_means or pooled",
    "noise_floor": "per-pair measurement variance (ps^2) removed before the LUT estimate",
    "multiset_nodes": "count repeated node names within a path separately",
    "n_bits": "number of pairs (bits) sampled for bitstrings",
    "modulus": "modulus in FPS",
    "class_min": "minimum paths for a LUT-node class to be included",
}


def _add_option(p, dest):
    flag = "--" + dest.replace("_", "-")
    default, typ = DEFAULTS[dest]
    text = HELP.get(dest, "")
    if typ is bool:
        p.add_argument(flag, dest=dest, action="store_true", default=None, help=text)
    else:
        shown = "" if default is None else f" (default {default})"
        p.add_argument(flag, dest=dest, type=typ, default=None, help=text + shown)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 1)")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default 1)")
    common.add_argument("--out-dir", dest="out_dir", default=None, help="output directory (default .)")
    common.add_argument("--units", choices=["ps", "fps"], default=None,
                        help="units of compensated data and estimates (default ps)")
    common.add_argument("--config", default=None, help="TOML settings file")

    parser = argparse.ArgumentParser(prog="pufvar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        for dest in OPTIONS[name]:
            _add_option(p, dest)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        s = Settings(args, load_config(args.config, args.command))
        return func(s)
    except PufVarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: MISSING_INPUT: {exc.filename}: no such file", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        print("error: INTERNAL_ERROR", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
