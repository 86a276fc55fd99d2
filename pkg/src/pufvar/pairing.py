"""Same-polarity path pairing and L-LUT-Mismatch / N-Node-Mismatch classification.

For two paths the mismatch counts are symmetric-difference sizes of their
component sets: L over LUTs (launch FF counted as a LUT), N over nodes.  A
pair is admissible when both paths have the same LUT count, share the capture
FF and differ in at least two LUTs.  With equal LUT counts L is always even.

Counts are computed blockwise from sparse incidence products,
``|A ^ B| = |A| + |B| - 2|A & B|``, so only pairs that can be admissible (same
polarity and capture FF) are ever materialized.
"""

import csv
import enum
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import PufVarError
from .fabric import POLARITIES, Kind

DEFAULT_CAPACITY = 50_000_000
BLOCK_PAIRS = 2_000_000


class ConfigTag(str, enum.Enum):
    ONE_EXTRA_LUT = "ONE_EXTRA_LUT"
    BUBBLE = "BUBBLE"
    L_LUT_MISMATCH = "L_LUT_MISMATCH"
    INADMISSIBLE = "INADMISSIBLE"


@dataclass(frozen=True)
class PairClassification:
    j: int
    k: int
    L: int
    N: int
    admissible: bool
    config_tag: ConfigTag


def count_pairings(npr, npf):
    """Number of same-polarity path pairings: C(npr, 2) + C(npf, 2)."""
    if npr < 0 or npf < 0:
        raise PufVarError("path counts must be >= 0", code="INVALID_PARAMS")
    return npr * (npr - 1) // 2 + npf * (npf - 1) // 2


def lut_tokens(path):
    return {(Kind.LAUNCH_FF, path.launch_ff.name)} | {
        (Kind.LUT, c.name) for c in path.components if c.kind is Kind.LUT}


def node_tokens(path, multiset=False):
    """Node identities of a path; repeats are dropped unless ``multiset``."""
    names = [c.name for c in path.components if c.kind is Kind.NODE]
    if not multiset:
        return set(names)
    seen = Counter()
    out = set()
    for n in names:
        seen[n] += 1
        out.add((n, seen[n]))
    return out


def _tag(same_capture, la, lb, L):
    if same_capture and la == lb and L >= 2:
        return ConfigTag.BUBBLE if L == 2 else ConfigTag.L_LUT_MISMATCH
    if same_capture and abs(la - lb) == 1 and L == 1:
        return ConfigTag.ONE_EXTRA_LUT
    return ConfigTag.INADMISSIBLE


def classify_pair(a, b, multiset_nodes=False):
    """Classify one pair of paths of the same polarity."""
    if a.polarity != b.polarity:
        raise PufVarError(f"paths {a.path_id} and {b.path_id} differ in polarity",
                          code="POLARITY_MISMATCH")
    L = len(lut_tokens(a) ^ lut_tokens(b))
    N = len(node_tokens(a, multiset_nodes) ^ node_tokens(b, multiset_nodes))
    tag = _tag(a.capture_ff == b.capture_ff, a.lut_count, b.lut_count, L)
    admissible = tag in (ConfigTag.BUBBLE, ConfigTag.L_LUT_MISMATCH)
    j, k = sorted((a.path_id, b.path_id))
    return PairClassification(j, k, L, N, admissible, tag)


@dataclass
class PairingIndex:
    """Admissible pairs grouped by (L, N), with census and screening status.

    ``subgroups`` holds only retained classes as ``(n, 2)`` int arrays of
    ``(j, k)`` with ``j < k``; ``census`` counts every admissible pair.
    """

    subgroups: dict
    census: dict
    screening: dict
    tag_counts: dict
    npr: int
    npf: int
    l_classes: object = None
    l_totals: dict = field(default_factory=dict)

    @property
    def total_pairings(self):
        return count_pairings(self.npr, self.npf)

    def members(self, L, N):
        return self.subgroups.get((L, N), np.empty((0, 2), dtype=np.int64))

    def included(self):
        return sorted(key for key, (ok, _) in self.screening.items() if ok)

    def retained_pairs(self):
        keys = sorted(self.subgroups)
        if not keys:
            return np.empty((0, 2), dtype=np.int64), keys
        return np.concatenate([self.subgroups[k] for k in keys]), keys

    def census_rows(self):
        rows = []
        for (L, N) in sorted(self.census):
            ok, reason = self.screening.get((L, N), (False, "not_retained"))
            rows.append((L, N, self.census[(L, N)], ok, reason))
        return rows


class _Tokenizer:
    def __init__(self, design, multiset_nodes):
        luts, nodes = [], []
        lut_ids, node_ids = {}, {}
        for p in design.paths:
            luts.append([lut_ids.setdefault(t, len(lut_ids)) for t in sorted(lut_tokens(p))])
            nodes.append([node_ids.setdefault(t, len(node_ids))
                          for t in sorted(node_tokens(p, multiset_nodes))])
        self.lut = _csr(luts, len(lut_ids))
        self.node = _csr(nodes, len(node_ids))
        self.lut_size = np.diff(self.lut.indptr)
        self.node_size = np.diff(self.node.indptr)


def _csr(rows, ncols):
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r) for r in rows])
    indices = np.fromiter((c for r in rows for c in r), dtype=np.int64, count=int(indptr[-1]))
    data = np.ones(len(indices), dtype=np.int32)
    return sparse.csr_matrix((data, indices, indptr), shape=(len(rows), max(ncols, 1)))


def _mismatch_block(tok, rows, cols):
    """Dense (len(rows), len(cols)) arrays of L and N."""
    li = (tok.lut[rows] @ tok.lut[cols].T).toarray()
    ni = (tok.node[rows] @ tok.node[cols].T).toarray()
    L = tok.lut_size[rows][:, None] + tok.lut_size[cols][None, :] - 2 * li
    N = tok.node_size[rows][:, None] + tok.node_size[cols][None, :] - 2 * ni
    return L, N


def _group_blocks(members):
    """Split an ordered group into row blocks of bounded upper-triangle size."""
    g = len(members)
    start = 0
    while start < g - 1:
        width = g - start
        step = max(1, min(g - 1 - start, BLOCK_PAIRS // max(width, 1)))
        yield members, start, start + step
        start += step


def _process_block(tok, lut_count, job):
    members, s, e = job
    rows = members[s:e]
    cols = members[s:]
    L, N = _mismatch_block(tok, rows, cols)
    r_i, c_i = np.triu_indices(len(rows), k=1, m=len(cols))
    j = rows[r_i]
    k = cols[c_i]
    L = L[r_i, c_i]
    N = N[r_i, c_i]
    la, lb = lut_count[j], lut_count[k]
    same_len = la == lb
    adm = same_len & (L >= 2)
    extra = (np.abs(la - lb) == 1) & (L == 1)
    return j[adm], k[adm], L[adm], N[adm], int(extra.sum())


def build_index(design, l_classes=None, min_members=200, capacity=DEFAULT_CAPACITY,
                multiset_nodes=False, threads=1):
    """Enumerate all same-polarity pairs and index the admissible ones.

    Only pairs sharing a capture FF can be admissible, so candidates are
    generated per (polarity, capture FF) group; every other pair is counted
    as inadmissible arithmetically.  ``l_classes`` (None = all) selects
    which L classes keep their member lists.
    """
    tok = _Tokenizer(design, multiset_nodes)
    lut_count = design.lut_counts()
    groups = defaultdict(list)
    for p in design.paths:
        groups[(POLARITIES.index(p.polarity), p.capture_ff.name)].append(p.path_id)
    jobs = []
    for key in sorted(groups):
        members = np.array(groups[key], dtype=np.int64)
        jobs.extend(_group_blocks(members))

    def run(job):
        return _process_block(tok, lut_count, job)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    census = Counter()
    keep = defaultdict(list)
    retained = 0
    one_extra = 0
    bubble = 0
    for j, k, L, N, extra in results:
        one_extra += extra
        if len(L) == 0:
            continue
        bubble += int((L == 2).sum())
        codes = L.astype(np.int64) << 32 | N.astype(np.int64)
        uniq, counts = np.unique(codes, return_counts=True)
        for c, n in zip(uniq.tolist(), counts.tolist()):
            census[(c >> 32, c & 0xFFFFFFFF)] += n
        if l_classes is not None:
            sel = np.isin(L, list(l_classes))
            j, k, L, N = j[sel], k[sel], L[sel], N[sel]
        retained += len(j)
        if retained > capacity:
            raise PufVarError(f"more than {capacity} retained pairs", code="CAPACITY_EXCEEDED")
        if len(j):
            keep_codes = L.astype(np.int64) << 32 | N.astype(np.int64)
            order = np.argsort(keep_codes, kind="stable")
            keep_codes = keep_codes[order]
            pairs = np.stack([j[order], k[order]], axis=1)
            cuts = np.flatnonzero(np.diff(keep_codes)) + 1
            for chunk, code in zip(np.split(pairs, cuts), keep_codes[np.r_[0, cuts]].tolist()):
                keep[(code >> 32, code & 0xFFFFFFFF)].append(chunk)

    subgroups = {}
    for key in sorted(keep):
        arr = np.concatenate(keep[key])
        order = np.lexsort((arr[:, 1], arr[:, 0]))
        subgroups[key] = arr[order]

    npr, npf = design.npr, design.npf
    admissible = sum(census.values())
    total = count_pairings(npr, npf)
    tag_counts = {
        ConfigTag.BUBBLE.value: bubble,
        ConfigTag.L_LUT_MISMATCH.value: admissible - bubble,
        ConfigTag.ONE_EXTRA_LUT.value: one_extra,
        ConfigTag.INADMISSIBLE.value: total - admissible - one_extra,
    }
    screening = {key: membership_status(len(v), min_members) for key, v in subgroups.items()}
    l_totals = defaultdict(int)
    for (L, _), n in census.items():
        l_totals[L] += n
    return PairingIndex(subgroups, dict(sorted(census.items())), screening, tag_counts,
                        npr, npf, None if l_classes is None else sorted(l_classes), dict(sorted(l_totals.items())))


def membership_status(n, min_members):
    if n < min_members:
        return (False, "membership")
    return (True, "ok")


def outlier_mask(values, k=3.0):
    """Members whose value exceeds mean + k*std of the *other* members."""
    v = np.asarray(values, dtype=np.float64)
    n = len(v)
    if n < 3:
        return np.zeros(n, dtype=bool)
    c = v - v.mean()
    s1 = c.sum()
    s2 = (c * c).sum()
    m = n - 1
    loo_mean = (s1 - c) / m
    loo_var = (s2 - c * c - m * loo_mean ** 2) / (m - 1)
    loo_sd = np.sqrt(np.maximum(loo_var, 0.0))
    return c > loo_mean + k * loo_sd


def screen_subclasses(index, pair_variance, min_members=200, outlier_k=3.0):
    """Apply membership and leave-one-out outlier screening.

    ``pair_variance`` maps ``(L, N)`` to the per-member PDCD variances, in
    member order.  Returns a new index sharing the member arrays.
    """
    screening = {}
    for key, members in index.subgroups.items():
        ok, reason = membership_status(len(members), min_members)
        if ok:
            var = pair_variance[key]
            if outlier_mask(var, outlier_k).any():
                ok, reason = False, "outlier"
        screening[key] = (ok, reason)
    return PairingIndex(index.subgroups, index.census, screening, index.tag_counts,
                        index.npr, index.npf, index.l_classes, index.l_totals)


# -- files -------------------------------------------------------------------

def write_census(index, dest):
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["L", "N", "members", "included", "reason"])
        for L, N, n, ok, reason in index.census_rows():
            w.writerow([L, N, n, int(ok), reason])


def write_pair_bins(index, out_dir):
    """Write ``pairs_<L>_<N>.bin`` files of packed little-endian uint32 (j, k)."""
    out_dir = Path(out_dir)
    written = []
    for (L, N), arr in sorted(index.subgroups.items()):
        path = out_dir / f"pairs_{L}_{N}.bin"
        path.write_bytes(np.ascontiguousarray(arr, dtype="<u4").tobytes())
        written.append(path)
    return written


def read_pair_bin(path):
    raw = Path(path).read_bytes()
    if len(raw) % 8:
        raise PufVarError(f"{path}: truncated pair file", code="PARSE_ERROR")
    return np.frombuffer(raw, dtype="<u4").reshape(-1, 2).astype(np.int64)


def read_index(census_path, bin_dir, npr=0, npf=0, min_members=200):
    """Rebuild a PairingIndex from ``pair_census.csv`` and the pair files."""
    census, subgroups = {}, {}
    bin_dir = Path(bin_dir)
    with open(census_path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["L"]), int(row["N"]))
            census[key] = int(row["members"])
            path = bin_dir / f"pairs_{key[0]}_{key[1]}.bin"
            if path.exists():
                subgroups[key] = read_pair_bin(path)
                if len(subgroups[key]) != census[key]:
                    raise PufVarError(f"{path.name}: {len(subgroups[key])} pairs, census says {census[key]}",
                                      code="DIMENSION_MISMATCH")
    screening = {key: membership_status(len(v), min_members) for key, v in subgroups.items()}
    return PairingIndex(subgroups, census, screening, {}, npr, npf)

