import io
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pufvar.errors import PufVarError
from pufvar.fabric import (ComponentId, DesignParams, FabricDesign, Kind, PathRecord, generate_design,
                           has_reconvergent_pair, lut_node_class, parse_design, validate_path,
                           write_design)
from pufvar.pairing import classify_pair

from conftest import small_design


def _path(pid, luts, nodes_per_seg=1, pol="R"):
    comps = []
    for i in range(luts):
        comps += [ComponentId(Kind.NODE, f"n{pid}_{i}_{k}") for k in range(nodes_per_seg)]
        comps.append(ComponentId(Kind.LUT, f"l{pid}_{i}"))
    comps += [ComponentId(Kind.NODE, f"n{pid}_end_{k}") for k in range(nodes_per_seg)]
    return PathRecord(pid, pol, ComponentId(Kind.LAUNCH_FF, "FF_A/Q"), ComponentId(Kind.CAPTURE_FF, "FF_B/D"),
                      tuple(comps))


def _dump(design):
    buf = io.StringIO()
    write_design(design, buf)
    return buf.getvalue()


# -- lut_node_class ------------------------------------------------------------

@pytest.mark.parametrize("luts,nodes,expected", [(8, 39, 47), (26, 139, 165), (1, 1, 2)])
def test_lut_node_class(luts, nodes, expected):
    comps = [ComponentId(Kind.NODE, f"n{i}") for i in range(nodes - luts)]
    for i in range(luts):
        comps += [ComponentId(Kind.NODE, f"m{i}"), ComponentId(Kind.LUT, f"l{i}")]
    p = PathRecord(0, "R", ComponentId(Kind.LAUNCH_FF, "a"), ComponentId(Kind.CAPTURE_FF, "b"), tuple(comps))
    assert p.lut_count == luts and p.node_count == nodes
    assert lut_node_class(p) == expected


def test_component_name_required():
    with pytest.raises(PufVarError) as exc:
        ComponentId(Kind.NODE, "")
    assert exc.value.code == "INVALID_COMPONENT"


# -- parse / write -------------------------------------------------------------

SEVEN_NODES = ["CLBLM_L_X50Y19/CLBLM_L_BQ", "CLBLM_L_X50Y19/CLBLM_LOGIC_OUTS5", "INT_L_X50Y19/LOGIC_OUTS_L5",
               "INT_L_X50Y19/NN2BEG1", "INT_L_X50Y21/NN2END1", "INT_L_X50Y21/IMUX_L34",
               "CLBLM_L_X50Y21/CLBLM_L_D6"]


def test_seven_node_segment():
    line = json.dumps({"id": 0, "pol": "R", "launch": "FF0/Q", "capture": "FF1/D",
                       "segs": [{"nodes": SEVEN_NODES, "lut": "CLBLM_L_X50Y21/D6LUT"},
                                {"nodes": ["INT/X"], "lut": None}]})
    d = parse_design(io.StringIO(line + "\n"))
    p = d.paths[0]
    assert p.segments()[0][0] == SEVEN_NODES
    assert len(p.segments()[0][0]) == 7
    assert p.node_count == 8 and p.lut_count == 1


def test_three_path_file_counts():
    lines = []
    for pid, pol in enumerate("RFR"):
        lines.append(json.dumps({"id": pid, "pol": pol, "launch": "L/Q", "capture": "C/D",
                                 "segs": [{"nodes": [f"a{pid}"], "lut": f"g{pid}"},
                                          {"nodes": [f"b{pid}"], "lut": None}]}))
    d = parse_design(io.StringIO("\n".join(lines) + "\n"))
    assert (d.npr, d.npf) == (2, 1)
    assert len(d.component_catalog) == 2 + 3 * 3


def test_counts_recomputed_not_trusted():
    line = json.dumps({"id": 0, "pol": "R", "launch": "L", "capture": "C", "lut_count": 99, "node_count": 0,
                       "segs": [{"nodes": ["a", "b"], "lut": "g"}, {"nodes": ["c"], "lut": None}]})
    p = parse_design(io.StringIO(line)).paths[0]
    assert (p.lut_count, p.node_count) == (1, 3)


@pytest.mark.parametrize("segs", [[], [{"nodes": [], "lut": None}]])
def test_empty_path(segs):
    line = json.dumps({"id": 0, "pol": "R", "launch": "L", "capture": "C", "segs": segs})
    with pytest.raises(PufVarError) as exc:
        parse_design(io.StringIO(line))
    assert exc.value.code == "EMPTY_PATH"


def test_parse_error_line_number():
    good = json.dumps({"id": 0, "pol": "R", "launch": "L", "capture": "C",
                       "segs": [{"nodes": ["a"], "lut": "g"}, {"nodes": ["b"], "lut": None}]})
    with pytest.raises(PufVarError) as exc:
        parse_design(io.StringIO(good + "\n{not json\n"))
    assert exc.value.code == "PARSE_ERROR" and exc.value.line == 2


def test_duplicate_id():
    good = json.dumps({"id": 0, "pol": "R", "launch": "L", "capture": "C",
                       "segs": [{"nodes": ["a"], "lut": "g"}, {"nodes": ["b"], "lut": None}]})
    with pytest.raises(PufVarError) as exc:
        parse_design(io.StringIO(good + "\n" + good + "\n"))
    assert exc.value.code == "DUPLICATE_PATH_ID"


@pytest.mark.parametrize("seg", [{"nodes": ["a"], "lut": "g"}, {"nodes": ["a"]}, {"nodes": [], "lut": "g"}])
def test_malformed_final_segment(seg):
    line = json.dumps({"id": 0, "pol": "R", "launch": "L", "capture": "C",
                       "segs": [{"nodes": ["x"], "lut": "h"}, seg]})
    with pytest.raises(PufVarError) as exc:
        parse_design(io.StringIO(line))
    assert exc.value.code == "PARSE_ERROR"


def test_bad_polarity():
    line = json.dumps({"id": 0, "pol": "X", "launch": "L", "capture": "C",
                       "segs": [{"nodes": ["a"], "lut": None}]})
    with pytest.raises(PufVarError):
        parse_design(io.StringIO(line))


def test_sparse_ids_rejected():
    line = json.dumps({"id": 3, "pol": "R", "launch": "L", "capture": "C",
                       "segs": [{"nodes": ["a"], "lut": "g"}, {"nodes": ["b"], "lut": None}]})
    with pytest.raises(PufVarError):
        parse_design(io.StringIO(line))


def test_file_is_utf8_lf(tmp_path, tiny_design):
    dest = tmp_path / "d.paths.jsonl"
    write_design(tiny_design, dest)
    raw = dest.read_bytes()
    assert b"\r\n" not in raw
    assert raw.decode("utf-8").count("\n") == len(tiny_design.paths)


@settings(max_examples=15)
@given(st.integers(min_value=0, max_value=2**32))
def test_parse_write_identity(seed):
    d = small_design(seed)
    text = _dump(d)
    back = parse_design(io.StringIO(text))
    assert back.paths == d.paths
    assert _dump(back) == text


# -- generator -----------------------------------------------------------------

def test_minimal_bubble():
    d = generate_design(n_layers=1, luts_per_layer=1, fanout=2, n_inputs=2, n_outputs=1, skip_prob=0.0)
    rising = [p for p in d.paths if p.polarity == "R"]
    assert len(rising) == 2
    c = classify_pair(*rising)
    assert c.admissible and c.L == 2
    assert rising[0].capture_ff == rising[1].capture_ff


def test_seed_determinism(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_design(generate_design(seed=42, target_path_count=300), a)
    write_design(generate_design(seed=42, target_path_count=300), b)
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.jsonl"
    write_design(generate_design(seed=43, target_path_count=300), c)
    assert c.read_bytes() != a.read_bytes()


def test_target_count_per_polarity():
    d = generate_design(target_path_count=250)
    assert d.npr == 250 and d.npf == 250
    assert d.npr + d.npf == len(d.paths)
    assert [p.path_id for p in d.paths] == list(range(len(d.paths)))


def test_metadata_records_params():
    d = generate_design(seed=7, target_path_count=50)
    assert d.metadata["seed"] == 7 and d.metadata["target_path_count"] == 50


@settings(max_examples=15)
@given(st.integers(min_value=0, max_value=2**32))
def test_generated_paths_are_well_formed(seed):
    d = small_design(seed)
    catalog = set(d.component_catalog)
    for p in d.paths:
        validate_path(p)
        assert p.node_count >= p.lut_count >= 1
        kinds = [c.kind for c in p.components]
        assert kinds[0] is Kind.NODE and kinds[-1] is Kind.NODE
        for x, y in zip(kinds, kinds[1:]):
            assert not (x is Kind.LUT and y is Kind.LUT)
        assert set(p.components) <= catalog and p.launch_ff in catalog


@settings(max_examples=15)
@given(st.integers(min_value=0, max_value=2**32))
def test_reconvergent_pair_exists(seed):
    d = small_design(seed)
    found = False
    for i, a in enumerate(d.paths):
        for b in d.paths[i + 1:]:
            if (a.polarity == b.polarity and a.capture_ff == b.capture_ff
                    and a.lut_count == b.lut_count):
                found = True
                break
        if found:
            break
    assert found and has_reconvergent_pair(d)


@pytest.mark.parametrize("bad", [dict(fanout=1), dict(n_layers=0), dict(nodes_per_segment_range=(3, 2)),
                                 dict(skip_prob=1.5)])
def test_invalid_params(bad):
    with pytest.raises(PufVarError) as exc:
        generate_design(**bad)
    assert exc.value.code == "INVALID_PARAMS"


def test_design_params_defaults_valid():
    DesignParams().validate()


def test_dense_ids_required():
    with pytest.raises(PufVarError):
        FabricDesign([_path(1, 2)])


def test_incidence_counts_launch_and_components():
    d = FabricDesign([_path(0, 3), _path(1, 2)])
    inc = d.incidence.toarray()
    assert inc.sum(axis=1).tolist() == [1 + 3 + 4, 1 + 2 + 3]
