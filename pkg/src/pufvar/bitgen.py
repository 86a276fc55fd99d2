"""Bitstring generation from compensated pair differences.

Offsets (the provisioning-population mean of each pair difference) are
subtracted, the result is shifted by half the modulus and wrapped, and the
lower half of the modulus range maps to '0', the upper half to '1'.  All
arithmetic is in FPS units.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PufVarError
from .simulator import FPS

DEFAULT_MODULUS = 20.0
DEFAULT_PAIRS = 2048


@dataclass
class HelperData:
    pairs: np.ndarray
    offsets: np.ndarray
    modulus: float = DEFAULT_MODULUS

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        if len(self.offsets) != len(self.pairs):
            raise PufVarError(f"{len(self.pairs)} pairs but {len(self.offsets)} offsets",
                              code="LENGTH_MISMATCH")
        if not self.modulus > 0:
            raise PufVarError("modulus must be > 0", code="INVALID_PARAMS")


@dataclass
class Bitstring:
    instance_id: int
    bits: np.ndarray

    @property
    def length(self):
        return len(self.bits)

    def __str__(self):
        return "".join("1" if b else "0" for b in self.bits)


def pdcd(cds, pairs):
    """Per-instance pair differences ``PDC[:, j] - PDC[:, k]``, shape (nc, pairs)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return cds.pdc[:, pairs[:, 0]] - cds.pdc[:, pairs[:, 1]]


def provision(cds, pairs, modulus=DEFAULT_MODULUS):
    """Helper data from a provisioning population: offsets = mean PDCD per pair."""
    if cds.units != FPS:
        cds = cds.to_units(FPS)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise PufVarError("no pairs to provision", code="INVALID_PARAMS")
    return HelperData(pairs, pdcd(cds, pairs).mean(axis=0), modulus)


def remove_offsets(cds, helper):
    if cds.units != FPS:
        cds = cds.to_units(FPS)
    return pdcd(cds, helper.pairs) - helper.offsets


def map_bits(pdcdo, modulus=DEFAULT_MODULUS):
    """Wrap ``pdcdo + modulus/2`` into [0, modulus); the upper half is '1'."""
    v = np.mod(np.asarray(pdcdo, dtype=np.float64) + modulus / 2.0, modulus)
    return (v >= modulus / 2.0).astype(np.uint8)


def generate_bits(cds, helper, instance_id):
    if not 0 <= instance_id < cds.nc:
        raise PufVarError(f"no instance {instance_id}", code="INVALID_PARAMS")
    if cds.units != FPS:
        cds = cds.to_units(FPS)
    row = cds.pdc[instance_id]
    d = row[helper.pairs[:, 0]] - row[helper.pairs[:, 1]] - helper.offsets
    return Bitstring(instance_id, map_bits(d, helper.modulus))


def generate_all(cds, helper):
    bits = map_bits(remove_offsets(cds, helper), helper.modulus)
    return [Bitstring(i, bits[i]) for i in range(cds.nc)]


def quality_report(bitstrings):
    """Mean pairwise inter-chip Hamming distance (%), mean '1' frequency and
    the per-bit '1' frequency across instances."""
    if len(bitstrings) < 2:
        raise PufVarError("need at least two bitstrings", code="INVALID_PARAMS")
    n = bitstrings[0].length
    if any(b.length != n for b in bitstrings):
        raise PufVarError("bitstrings differ in length", code="LENGTH_MISMATCH")
    if n == 0:
        raise PufVarError("empty bitstrings", code="LENGTH_MISMATCH")
    m = np.vstack([b.bits for b in bitstrings]).astype(np.int64)
    k = m.shape[0]
    ones = m.sum(axis=0)
    # sum over instance pairs of per-bit disagreements is ones * zeros per bit
    hd_total = int((ones * (k - ones)).sum())
    hd_pct = 100.0 * hd_total / (n * k * (k - 1) / 2)
    per_bit = ones / k
    return {
        "n_instances": k,
        "n_bits": n,
        "mean_interchip_hd_pct": float(hd_pct),
        "bit_frequency_mean": float(per_bit.mean()),
        "per_bit_aliasing": per_bit.tolist(),
    }


def sample_pairs(index, n=DEFAULT_PAIRS, seed=1):
    """Seeded sample of admissible pairs from an index built with all L classes.

    Returned pairs are sorted, so the choice does not depend on member order.
    """
    pairs, _ = index.retained_pairs()
    if len(pairs) == 0:
        raise PufVarError("no admissible pairs", code="INVALID_PARAMS")
    if len(pairs) <= n:
        chosen = pairs
    else:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB17]))
        chosen = pairs[rng.choice(len(pairs), size=n, replace=False)]
    order = np.lexsort((chosen[:, 1], chosen[:, 0]))
    return chosen[order]


# -- files -------------------------------------------------------------------

def write_helper(helper, dest, decimals=4):
    doc = {
        "modulus": helper.modulus,
        "units": FPS,
        "pairs": helper.pairs.tolist(),
        "offsets": [round(float(o), decimals) for o in helper.offsets],
    }
    Path(dest).write_text(json.dumps(doc) + "\n")


def read_helper(src):
    doc = json.loads(Path(src).read_text())
    return HelperData(np.array(doc["pairs"], dtype=np.int64).reshape(-1, 2), doc["offsets"], doc["modulus"])


def write_bits(bitstrings, out_dir):
    out_dir = Path(out_dir)
    for b in bitstrings:
        (out_dir / f"bits_{b.instance_id}.txt").write_text(str(b) + "\n")


def read_bits(path, instance_id=0):
    text = Path(path).read_text().strip()
    if set(text) - {"0", "1"}:
        raise PufVarError(f"{path}: not a bitstring", code="PARSE_ERROR")
    return Bitstring(instance_id, np.frombuffer(text.encode(), dtype=np.uint8) - ord("0"))


def write_quality(report, dest):
    doc = dict(report)
    doc["per_bit_aliasing"] = [round(v, 6) for v in doc["per_bit_aliasing"]]
    doc["mean_interchip_hd_pct"] = round(doc["mean_interchip_hd_pct"], 6)
    doc["bit_frequency_mean"] = round(doc["bit_frequency_mean"], 6)
    Path(dest).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
