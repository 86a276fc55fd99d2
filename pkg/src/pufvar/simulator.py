"""Synthetic delay measurements with known ground truth.

Each PUF instance gets its own component delays (nominal plus Gaussian
within-die variation), an affine chip-to-chip transform ``gain * x + offset``,
and is measured by clock strobing: every sample adds Gaussian noise and is
digitized to the first passing strobe, ``ceil(delay / delta_t)``.  The
averaged strobe counts form the dataset, in fine-phase-shift (FPS) units.
"""

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import hashrng
from .errors import ParseError, PufVarError
from .fabric import POLARITIES, Kind, write_design

PS = "PS"
FPS = "FPS"

# stream ids for the counter-based generator
_DELAY, _HETERO, _GAIN, _OFFSET, _NOISE = 1, 2, 3, 4, 5
_MAX_RESAMPLE = 8


@dataclass
class GroundTruth:
    nominal_lut_delay: float = 130.0
    nominal_node_delay: float = 24.0
    nominal_ff_clk_to_q: float = 130.0
    sigma2_lut: float = 25.38
    sigma2_node: float = 16.83
    heterogeneity: float = 0.0
    chip_gain_sigma: float = 0.03
    chip_offset_sigma: float = 10.0
    noise_sigma: float = 9.0
    samples_per_measurement: int = 16
    delta_t: float = 18.0

    def __post_init__(self):
        for f in ("sigma2_lut", "sigma2_node", "heterogeneity", "chip_gain_sigma",
                  "chip_offset_sigma", "noise_sigma"):
            if getattr(self, f) < 0:
                raise PufVarError(f"{f} must be >= 0", code="INVALID_PARAMS")
        if self.delta_t <= 0:
            raise PufVarError("delta_t must be > 0", code="INVALID_PARAMS")
        if self.samples_per_measurement < 1:
            raise PufVarError("samples_per_measurement must be >= 1", code="INVALID_PARAMS")

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class InstanceRealization:
    """Hidden per-instance state; ``delays[p, c]`` is the delay of catalog
    component ``c`` under polarity ``POLARITIES[p]``."""

    instance_id: int
    delays: np.ndarray
    gain: float
    offset: float
    catalog: list = field(repr=False, default=None)

    def delay(self, component, polarity="R"):
        return float(self.delays[POLARITIES.index(polarity), self.catalog.index(component)])


@dataclass
class DelayDataset:
    """Averaged path delays, ``pd[i, j]`` for instance ``i`` and path ``j``."""

    pd: np.ndarray
    units: str = FPS
    delta_t: float = 18.0
    truth: GroundTruth = None
    design_ref: str = ""

    def __post_init__(self):
        self.pd = np.asarray(self.pd, dtype=np.float64)
        if self.pd.ndim != 2:
            raise PufVarError("pd must be a 2-D matrix", code="DIMENSION_MISMATCH")
        if self.units not in (PS, FPS):
            raise PufVarError(f"unknown units {self.units!r}", code="INVALID_PARAMS")

    @property
    def nc(self):
        return self.pd.shape[0]

    @property
    def np(self):
        return self.pd.shape[1]

    def to_units(self, units):
        if units == self.units:
            return self
        factor = self.delta_t if units == PS else 1.0 / self.delta_t
        return DelayDataset(self.pd * factor, units, self.delta_t, self.truth, self.design_ref)

    def validate(self):
        if not np.all(np.isfinite(self.pd)) or np.any(self.pd <= 0):
            raise PufVarError("path delays must be finite and > 0", code="INVALID_DATASET")


def design_digest(design):
    buf = io.StringIO()
    write_design(design, buf)
    return hashlib.sha256(buf.getvalue().encode("utf-8")).hexdigest()


def _component_sigma(design, truth, seed, keys):
    catalog = design.component_catalog
    var = np.zeros(len(catalog))
    nominal = np.zeros(len(catalog))
    for c, comp in enumerate(catalog):
        if comp.kind in (Kind.LUT, Kind.LAUNCH_FF):
            var[c] = truth.sigma2_lut
            nominal[c] = truth.nominal_lut_delay if comp.kind is Kind.LUT else truth.nominal_ff_clk_to_q
        elif comp.kind is Kind.NODE:
            var[c] = truth.sigma2_node
            nominal[c] = truth.nominal_node_delay
    if truth.heterogeneity > 0:
        h = truth.heterogeneity
        z = hashrng.normal(keys, seed, _HETERO)
        var = var * np.exp(h * z - 0.5 * h * h)  # lognormal scale with mean 1
    return nominal, np.sqrt(var)


def realize_instances(design, truth, nc, seed=1, instance_ids=None):
    """Draw per-instance component delays, gain and offset.

    Every variate is a function of (seed, instance id, component name), so
    realizations do not depend on catalog order or on how work is split.
    """
    if nc < 2:
        raise PufVarError("need at least two instances", code="INVALID_PARAMS")
    catalog = design.component_catalog
    keys = hashrng.name_keys([f"{c.kind.value}:{c.name}" for c in catalog])
    nominal, sigma = _component_sigma(design, truth, seed, keys)
    ids = range(nc) if instance_ids is None else instance_ids
    out = []
    for i in ids:
        delays = np.empty((len(POLARITIES), len(catalog)))
        for p in range(len(POLARITIES)):
            d = nominal + sigma * hashrng.normal(keys, seed, _DELAY, i, p, 0)
            # capture FFs carry no delay of their own
            bad = (d <= 0) & (nominal > 0)
            attempt = 0
            while bad.any():
                attempt += 1
                if attempt > _MAX_RESAMPLE:
                    raise PufVarError(f"instance {i}: component delay <= 0 after resampling",
                                      code="NONPOSITIVE_DELAY")
                redo = nominal[bad] + sigma[bad] * hashrng.normal(keys[bad], seed, _DELAY, i, p, attempt)
                d[bad] = redo
                bad = (d <= 0) & (nominal > 0)
            delays[p] = d
        gain = 1.0 + truth.chip_gain_sigma * float(hashrng.normal(np.uint64(i), seed, _GAIN))
        offset = truth.chip_offset_sigma * float(hashrng.normal(np.uint64(i), seed, _OFFSET))
        out.append(InstanceRealization(i, delays, gain, offset, catalog))
    return out


def true_path_delays(design, realization):
    """Noise-free path delays (ps) of one instance, after the chip transform."""
    inc = design.incidence
    pol = np.array([POLARITIES.index(p.polarity) for p in design.paths])
    raw = np.empty(len(design.paths))
    for p in range(len(POLARITIES)):
        rows = np.flatnonzero(pol == p)
        raw[rows] = inc[rows] @ realization.delays[p]
    return realization.gain * raw + realization.offset


def digitize(delay_ps, delta_t):
    """Strobe count of the first passing phase shift."""
    return np.ceil(np.asarray(delay_ps) / delta_t)


def measure_instance(design, realization, truth, seed=1):
    true = true_path_delays(design, realization)
    s = truth.samples_per_measurement
    if truth.noise_sigma == 0:
        return digitize(true, truth.delta_t)
    rng = np.random.default_rng(np.random.SeedSequence([seed, _NOISE, realization.instance_id]))
    samples = true[None, :] + rng.normal(0.0, truth.noise_sigma, size=(s, len(true)))
    return digitize(samples, truth.delta_t).mean(axis=0)


def measure_dataset(design, realizations, truth, seed=1, threads=1):
    """Clock-strobe every path of every instance; returns an FPS dataset."""
    if not realizations:
        raise PufVarError("no instances to measure", code="INVALID_PARAMS")

    def run(r):
        return measure_instance(design, r, truth, seed)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, realizations))
    else:
        rows = [run(r) for r in realizations]
    ds = DelayDataset(np.vstack(rows), FPS, truth.delta_t, truth, design_digest(design))
    ds.validate()
    return ds


def simulate(design, truth, nc, seed=1, threads=1):
    """Realize ``nc`` instances and measure them."""
    return measure_dataset(design, realize_instances(design, truth, nc, seed), truth, seed, threads)


# -- CSV ---------------------------------------------------------------------

def write_dataset(ds, dest, decimals=4, truth_path=None):
    """Write the dataset as CSV (one row per path, one column per instance).

    ``decimals=None`` writes full round-trip precision.  The ground truth,
    when present, goes to a ``truth.json`` sidecar next to ``dest``.
    """
    dest = Path(dest)
    fmt = "%.17g" if decimals is None else f"%.{decimals}f"
    with open(dest, "w", newline="") as fh:
        fh.write("path_id," + ",".join(f"inst_{i}" for i in range(ds.nc)) + "\n")
        for j in range(ds.np):
            fh.write(str(j) + "," + ",".join(fmt % v for v in ds.pd[:, j]) + "\n")
    if ds.truth is not None:
        tp = Path(truth_path) if truth_path else dest.with_name("truth.json")
        tp.write_text(ds.truth.to_json())


def read_dataset(src, units=FPS, delta_t=None, truth_path=None):
    """Read a dataset CSV; ``truth_path=False`` skips the truth sidecar."""
    src = Path(src)
    with open(src, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty dataset file", line=1) from None
        if not header or header[0] != "path_id":
            raise ParseError("header must start with path_id", line=1)
        width = len(header)
        cols = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise PufVarError(f"expected {width} fields, found {len(row)}",
                                  code="DIMENSION_MISMATCH", line=lineno)
            try:
                pid = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if pid != len(cols):
                raise ParseError(f"path ids must be dense and ordered, got {pid}", line=lineno)
            cols.append(vals)
    if not cols:
        raise ParseError("dataset has no rows")
    truth = None
    tp = Path(truth_path) if truth_path else src.with_name("truth.json")
    if truth_path is not False and tp.exists():
        truth = GroundTruth.from_json(tp.read_text())
    if delta_t is None:
        delta_t = truth.delta_t if truth else 18.0
    return DelayDataset(np.array(cols, dtype=np.float64).T, units, delta_t, truth)
