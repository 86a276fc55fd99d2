"""Structural model of launch-to-capture paths through an FPGA fabric.

A path is a launch FF followed by segments, each a run of one or more nodes
(wire plus entry switch) ending in a LUT, and a final node run into the
capture FF.  Designs are either generated as layered random DAGs or read from
the line-oriented ``.paths.jsonl`` format.
"""

import enum
import io
import json
import random
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ParseError, PufVarError

RISING = "R"
FALLING = "F"
POLARITIES = (RISING, FALLING)


class Kind(str, enum.Enum):
    LUT = "LUT"
    NODE = "NODE"
    LAUNCH_FF = "LAUNCH_FF"
    CAPTURE_FF = "CAPTURE_FF"


@dataclass(frozen=True, order=True)
class ComponentId:
    kind: Kind
    name: str

    def __post_init__(self):
        if not self.name:
            raise PufVarError("component name must be non-empty", code="INVALID_COMPONENT")


@dataclass(frozen=True)
class PathRecord:
    """One launch-to-capture path; ``components`` excludes both FFs."""

    path_id: int
    polarity: str
    launch_ff: ComponentId
    capture_ff: ComponentId
    components: tuple

    @cached_property
    def lut_count(self):
        return sum(1 for c in self.components if c.kind is Kind.LUT)

    @cached_property
    def node_count(self):
        return sum(1 for c in self.components if c.kind is Kind.NODE)

    def segments(self):
        """Split components into ``(nodes, lut)`` runs; the last run has ``lut=None``."""
        segs, run = [], []
        for c in self.components:
            if c.kind is Kind.NODE:
                run.append(c.name)
            else:
                segs.append((run, c.name))
                run = []
        segs.append((run, None))
        return segs


def lut_node_class(path):
    """Total component count (LUTs + nodes) of a path."""
    return path.lut_count + path.node_count


def validate_path(path):
    """Check the (node+ LUT)* node+ shape of a path; raises PufVarError."""
    if not path.components:
        raise PufVarError(f"path {path.path_id} has no components", code="EMPTY_PATH")
    if path.polarity not in POLARITIES:
        raise PufVarError(f"path {path.path_id}: bad polarity {path.polarity!r}", code="INVALID_PATH")
    prev = Kind.LUT  # the launch FF plays the role of a LUT here
    for c in path.components:
        if c.kind not in (Kind.LUT, Kind.NODE):
            raise PufVarError(f"path {path.path_id}: FF inside component list", code="INVALID_PATH")
        if c.kind is Kind.LUT and prev is not Kind.NODE:
            raise PufVarError(f"path {path.path_id}: LUT {c.name} not preceded by a node", code="INVALID_PATH")
        prev = c.kind
    if prev is not Kind.NODE:
        raise PufVarError(f"path {path.path_id}: must end in a node run into the capture FF",
                          code="INVALID_PATH")


@dataclass
class FabricDesign:
    paths: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, p in enumerate(self.paths):
            if p.path_id != i:
                raise PufVarError("path ids must be dense 0..NP-1 in file order", code="INVALID_DESIGN")

    @property
    def npr(self):
        return sum(1 for p in self.paths if p.polarity == RISING)

    @property
    def npf(self):
        return sum(1 for p in self.paths if p.polarity == FALLING)

    def __len__(self):
        return len(self.paths)

    @cached_property
    def component_catalog(self):
        """Sorted list of every ComponentId referenced by a path."""
        seen = set()
        for p in self.paths:
            seen.add(p.launch_ff)
            seen.add(p.capture_ff)
            seen.update(p.components)
        return sorted(seen)

    @cached_property
    def component_index(self):
        return {c: i for i, c in enumerate(self.component_catalog)}

    @cached_property
    def incidence(self):
        """Sparse (paths x catalog) matrix of component multiplicities.

        Launch FF, nodes and LUTs are counted; the capture FF is not, its
        setup time being folded into the final node run.
        """
        from scipy import sparse

        idx = self.component_index
        rows, cols = [], []
        for p in self.paths:
            members = [p.launch_ff, *p.components]
            rows.extend([p.path_id] * len(members))
            cols.extend(idx[c] for c in members)
        data = np.ones(len(rows), dtype=np.float64)
        m = sparse.coo_matrix((data, (rows, cols)), shape=(len(self.paths), len(idx)))
        return m.tocsr()

    def lut_counts(self):
        return np.array([p.lut_count for p in self.paths], dtype=np.int64)

    def node_counts(self):
        return np.array([p.node_count for p in self.paths], dtype=np.int64)

    def classes(self):
        return self.lut_counts() + self.node_counts()


# -- file format -------------------------------------------------------------

def path_to_json(p):
    segs = [{"nodes": nodes, "lut": lut} for nodes, lut in p.segments()]
    obj = {"id": p.path_id, "pol": p.polarity, "launch": p.launch_ff.name,
           "capture": p.capture_ff.name, "segs": segs}
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def write_design(design, dest):
    """Write ``design`` as JSON lines to a path or text stream."""
    text = "".join(path_to_json(p) + "\n" for p in design.paths)
    if isinstance(dest, (str, Path)):
        Path(dest).write_bytes(text.encode("utf-8"))
    else:
        dest.write(text)


def _path_from_obj(obj, lineno):
    try:
        pid = obj["id"]
        pol = obj["pol"]
        launch = obj["launch"]
        capture = obj["capture"]
        segs = obj["segs"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"missing field {exc}", line=lineno) from None
    if not isinstance(pid, int) or isinstance(pid, bool) or pid < 0:
        raise ParseError(f"bad path id {pid!r}", line=lineno)
    if pol not in POLARITIES:
        raise ParseError(f"bad polarity {pol!r}", line=lineno)
    if not isinstance(segs, list):
        raise ParseError("segs must be a list", line=lineno)
    if not segs or all(not s.get("nodes") and s.get("lut") is None for s in segs if isinstance(s, dict)):
        raise PufVarError(f"path {pid} has no components", code="EMPTY_PATH", line=lineno)
    comps = []
    for si, seg in enumerate(segs):
        if not isinstance(seg, dict) or "nodes" not in seg or "lut" not in seg:
            raise ParseError(f"segment {si} malformed", line=lineno)
        nodes, lut = seg["nodes"], seg["lut"]
        if not isinstance(nodes, list) or not nodes or not all(isinstance(n, str) and n for n in nodes):
            raise ParseError(f"segment {si} needs a non-empty list of node names", line=lineno)
        last = si == len(segs) - 1
        if last and lut is not None:
            raise ParseError("final segment must have lut null", line=lineno)
        if not last and not (isinstance(lut, str) and lut):
            raise ParseError(f"segment {si} lacks a LUT name", line=lineno)
        comps.extend(ComponentId(Kind.NODE, n) for n in nodes)
        if lut is not None:
            comps.append(ComponentId(Kind.LUT, lut))
    if not (isinstance(launch, str) and launch and isinstance(capture, str) and capture):
        raise ParseError("launch/capture names must be non-empty strings", line=lineno)
    return PathRecord(pid, pol, ComponentId(Kind.LAUNCH_FF, launch),
                      ComponentId(Kind.CAPTURE_FF, capture), tuple(comps))


def parse_design(src):
    """Read a ``.paths.jsonl`` design from a path or text stream.

    LUT and node counts are recomputed from the segments.  Paths are ordered
    by id, and ids must be dense.
    """
    if isinstance(src, (str, Path)):
        text = Path(src).read_text(encoding="utf-8")
    else:
        text = src.read()
    by_id = {}
    for lineno, line in enumerate(io.StringIO(text), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
        p = _path_from_obj(obj, lineno)
        if p.path_id in by_id:
            raise PufVarError(f"path id {p.path_id} repeated", code="DUPLICATE_PATH_ID", line=lineno)
        by_id[p.path_id] = p
    if sorted(by_id) != list(range(len(by_id))):
        raise ParseError("path ids are not dense 0..NP-1")
    return FabricDesign([by_id[i] for i in range(len(by_id))])


# -- synthetic generator -----------------------------------------------------

@dataclass
class DesignParams:
    n_inputs: int = 32
    n_layers: int = 8
    luts_per_layer: int = 24
    fanin: int = 3
    fanout: int = 2
    nodes_per_segment_range: tuple = (1, 4)
    target_path_count: int = 1000  # per polarity
    n_outputs: int = 2
    skip_prob: float = 0.02
    seed: int = 1

    def validate(self):
        for name in ("n_inputs", "n_layers", "luts_per_layer", "fanin", "target_path_count", "n_outputs"):
            if getattr(self, name) < 1:
                raise PufVarError(f"{name} must be >= 1", code="INVALID_PARAMS")
        if self.fanout < 2:
            raise PufVarError("fanout must be >= 2 for reconvergent pairs", code="INVALID_PARAMS")
        lo, hi = self.nodes_per_segment_range
        if not 1 <= lo <= hi:
            raise PufVarError("nodes_per_segment_range must satisfy 1 <= lo <= hi", code="INVALID_PARAMS")
        if not 0.0 <= self.skip_prob <= 1.0:
            raise PufVarError("skip_prob must lie in [0, 1]", code="INVALID_PARAMS")


# desk: ~2,000 paths; full: ~8,000 paths and enough members per (L, N)
# subclass for NC=500 recovery runs
PRESETS = {
    "desk": {},
    "full": {"n_outputs": 8, "target_path_count": 4000},
}


class _Net:
    """Routing of one driver: shared trunk nodes plus one branch per sink."""

    def __init__(self, trunk):
        self.trunk = trunk
        self.branches = {}


def _path_counts(succ, order):
    """Number of launch-to-capture paths starting at each vertex."""
    count = {}
    for v in reversed(order):
        kids = succ.get(v)
        count[v] = sum(count[w] for w in kids) if kids else 1
    return count


def _unrank(rank, launches, succ, count):
    """The ``rank``-th path in depth-first order."""
    for v in launches:
        if rank < count[v]:
            break
        rank -= count[v]
    seq = [v]
    while succ.get(v):
        for w in succ[v]:
            if rank < count[w]:
                v = w
                break
            rank -= count[w]
        seq.append(v)
    return tuple(seq)


def generate_design(params=None, **overrides):
    """Generate a layered random DAG design.

    Launch FFs feed layer 0, each LUT draws ``fanin`` inputs from the layer
    before it, and every driver is topped up to at least ``fanout`` sinks.
    The last layer drives ``n_outputs`` capture FFs.  With ``skip_prob`` > 0
    some drivers also bypass one layer, giving paths one LUT shorter.
    Each driver's net has a trunk of nodes shared by all its sinks.
    """
    if params is None:
        params = DesignParams(**overrides)
    elif overrides:
        params = DesignParams(**{**params.__dict__, **overrides})
    params.validate()
    rng = np.random.default_rng(np.random.SeedSequence([params.seed & (2**64 - 1), 0x5EED]))
    lo, hi = params.nodes_per_segment_range

    # vertices: ("L", i) launch FF, ("G", layer, i) LUT, ("C", i) capture FF
    launches = [("L", i) for i in range(params.n_inputs)]
    layers = [[("G", l, i) for i in range(params.luts_per_layer)] for l in range(params.n_layers)]
    captures = [("C", i) for i in range(params.n_outputs)]
    tiers = [launches, *layers, captures]

    succ = {}

    def connect(a, b):
        lst = succ.setdefault(a, [])
        if b not in lst:
            lst.append(b)

    for t in range(1, len(tiers)):
        drivers, sinks = tiers[t - 1], tiers[t]
        if t == len(tiers) - 1:
            # each capture FF is fed by a distinct last-layer LUT where possible
            for ci, c in enumerate(sinks):
                connect(drivers[ci % len(drivers)], c)
            continue
        k = min(params.fanin, len(drivers))
        for s in sinks:
            for d in rng.choice(len(drivers), size=k, replace=False):
                connect(drivers[d], s)
        want = min(params.fanout, len(sinks))
        for d in drivers:
            have = succ.get(d, [])
            free = [i for i, s in enumerate(sinks) if s not in have]
            need = want - len(have)
            if need > 0:
                for i in rng.choice(free, size=need, replace=False):
                    connect(d, sinks[i])
        if params.skip_prob > 0 and t + 1 < len(tiers) - 1:
            for d in drivers:
                if rng.random() < params.skip_prob:
                    far = tiers[t + 1]
                    connect(d, far[int(rng.integers(len(far)))])

    # prune LUTs that cannot reach a capture FF
    reach = set(captures)
    for tier in reversed(tiers[:-1]):
        for v in tier:
            kids = [w for w in succ.get(v, []) if w in reach]
            if kids:
                succ[v] = sorted(kids, key=_vkey)
                reach.add(v)
            else:
                succ.pop(v, None)
    live_launches = [v for v in launches if v in reach]

    nets = {}
    counter = [0]

    def node_name(v, tag):
        counter[0] += 1
        return f"INT_{_vname(v)}/{tag}{counter[0]}"

    for v in sorted(succ, key=_vkey):
        trunk_len = int(rng.integers(0, lo))  # trunk + branch lands in [lo, hi]
        net = _Net([node_name(v, "OUT") for _ in range(trunk_len)])
        for w in succ[v]:
            blen = int(rng.integers(max(1, lo - trunk_len), hi - trunk_len + 1))
            net.branches[w] = [node_name(v, "N") for _ in range(blen)]
        nets[v] = net

    order = [v for tier in tiers for v in tier]
    count = _path_counts(succ, order)
    total = sum(count[v] for v in live_launches)
    picker = random.Random(int(rng.integers(2**63)))

    paths = []
    for pol in POLARITIES:
        if total > params.target_path_count:
            ranks = sorted(picker.sample(range(total), params.target_path_count))
        else:
            ranks = range(total)
        chosen = [_unrank(r, live_launches, succ, count) for r in ranks]
        for seq in chosen:
            comps = []
            for a, b in zip(seq, seq[1:]):
                net = nets[a]
                comps.extend(ComponentId(Kind.NODE, n) for n in net.trunk + net.branches[b])
                if b[0] == "G":
                    comps.append(ComponentId(Kind.LUT, f"CLB_{_vname(b)}/LUT"))
            paths.append(PathRecord(len(paths), pol,
                                    ComponentId(Kind.LAUNCH_FF, f"FF_{_vname(seq[0])}/Q"),
                                    ComponentId(Kind.CAPTURE_FF, f"FF_{_vname(seq[-1])}/D"),
                                    tuple(comps)))

    design = FabricDesign(paths, metadata={"generator": "layered-dag", **_params_dict(params)})
    if not has_reconvergent_pair(design):
        raise PufVarError("no equal-length path pair shares a capture FF", code="UNSATISFIABLE_PARAMS")
    return design


def _vkey(v):
    order = {"L": 0, "G": 1, "C": 2}
    return (order[v[0]],) + tuple(v[1:])


def _vname(v):
    if v[0] == "G":
        return f"X{v[1]}Y{v[2]}"
    return f"{'LAUNCH' if v[0] == 'L' else 'CAPTURE'}{v[1]}"


def _params_dict(params):
    d = dict(params.__dict__)
    d["nodes_per_segment_range"] = list(d["nodes_per_segment_range"])
    return d


def has_reconvergent_pair(design):
    """True if two same-polarity paths of equal LUT count share a capture FF."""
    seen = set()
    for p in design.paths:
        key = (p.polarity, p.capture_ff, p.lut_count)
        if key in seen:
            return True
        seen.add(key)
    return False
