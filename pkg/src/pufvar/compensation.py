"""Removal of chip-to-chip variation by per-instance standardization.

Each instance's path-delay distribution is converted to standard normal form
and rescaled to the population reference: the mean of the instance means and
the mean of the instance standard deviations.  The result keeps only
within-die variation.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PufVarError
from .simulator import PS, DelayDataset, write_dataset


@dataclass(frozen=True)
class InstanceStats:
    u_i: float
    sigma_i: float


@dataclass(frozen=True)
class ReferenceStats:
    u_ref: float
    sigma_ref: float


@dataclass
class CompensatedDataset:
    pdc: np.ndarray
    instance_stats: list
    reference: ReferenceStats
    z: np.ndarray = None
    units: str = PS
    delta_t: float = 18.0

    @property
    def nc(self):
        return self.pdc.shape[0]

    @property
    def np(self):
        return self.pdc.shape[1]

    def to_units(self, units):
        if units == self.units:
            return self
        factor = self.delta_t if units == PS else 1.0 / self.delta_t
        ref = ReferenceStats(self.reference.u_ref * factor, self.reference.sigma_ref * factor)
        stats = [InstanceStats(s.u_i * factor, s.sigma_i * factor) for s in self.instance_stats]
        return CompensatedDataset(self.pdc * factor, stats, ref, self.z, units, self.delta_t)

    def as_dataset(self):
        return DelayDataset(self.pdc, self.units, self.delta_t)


def _moments(pd):
    if pd.shape[1] < 2:
        raise PufVarError("need at least two paths per instance", code="INVALID_DATASET")
    u = pd.mean(axis=1)
    sigma = np.sqrt(((pd - u[:, None]) ** 2).sum(axis=1) / (pd.shape[1] - 1))
    bad = np.flatnonzero(sigma == 0)
    if len(bad):
        raise PufVarError(f"instance {int(bad[0])} has zero spread", code="DEGENERATE_INSTANCE")
    return u, sigma


def instance_stats(ds):
    """Per-instance mean and (n-1) standard deviation over paths."""
    u, sigma = _moments(np.asarray(ds.pd if isinstance(ds, DelayDataset) else ds, dtype=np.float64))
    return [InstanceStats(float(a), float(b)) for a, b in zip(u, sigma)]


def reference_stats(stats):
    return ReferenceStats(float(np.mean([s.u_i for s in stats])),
                          float(np.mean([s.sigma_i for s in stats])))


def compensate(ds, reference=None, keep_z=False, units=PS):
    """Standardize each instance and rescale to the reference mean and spread.

    ``reference`` pins frozen population statistics (e.g. from provisioning);
    by default they come from the dataset itself.
    """
    ds = ds.to_units(units)
    pd = ds.pd
    if reference is None and pd.shape[0] < 2:
        raise PufVarError("need at least two instances", code="INVALID_DATASET")
    u, sigma = _moments(pd)
    stats = [InstanceStats(float(a), float(b)) for a, b in zip(u, sigma)]
    if reference is None:
        reference = ReferenceStats(float(u.mean()), float(sigma.mean()))
    z = (pd - u[:, None]) / sigma[:, None]
    pdc = z * reference.sigma_ref + reference.u_ref
    return CompensatedDataset(pdc, stats, reference, z if keep_z else None, ds.units, ds.delta_t)


def write_compensation(cds, out_dir, pdc_name="pdc.csv", stats_name="compensation.json"):
    out_dir = Path(out_dir)
    write_dataset(cds.as_dataset(), out_dir / pdc_name, decimals=None)
    doc = {
        "units": cds.units,
        "delta_t": cds.delta_t,
        "reference": {"u_ref": cds.reference.u_ref, "sigma_ref": cds.reference.sigma_ref},
        "instances": [{"u_i": s.u_i, "sigma_i": s.sigma_i} for s in cds.instance_stats],
    }
    (out_dir / stats_name).write_text(json.dumps(doc, indent=2) + "\n")


def read_compensation(pdc_path, stats_path):
    from .simulator import read_dataset

    doc = json.loads(Path(stats_path).read_text())
    ds = read_dataset(pdc_path, units=doc["units"], delta_t=doc["delta_t"], truth_path=False)
    ref = ReferenceStats(**doc["reference"])
    stats = [InstanceStats(**s) for s in doc["instances"]]
    return CompensatedDataset(ds.pd, stats, ref, None, doc["units"], doc["delta_t"])
