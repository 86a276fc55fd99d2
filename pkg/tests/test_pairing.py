import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pufvar.errors import PufVarError
from pufvar.fabric import ComponentId, FabricDesign, Kind, PathRecord, generate_design
from pufvar.pairing import (ConfigTag, build_index, classify_pair, count_pairings, membership_status,
                            outlier_mask, read_index, screen_subclasses, write_census, write_pair_bins)

from conftest import small_design
from oracles import brute_force_census


def N_(name):
    return ComponentId(Kind.NODE, name)


def L_(name):
    return ComponentId(Kind.LUT, name)


def _rec(pid, launch, comps, capture="CAP/D", pol="R"):
    return PathRecord(pid, pol, ComponentId(Kind.LAUNCH_FF, launch), ComponentId(Kind.CAPTURE_FF, capture),
                      tuple(comps))


def bubble_pair():
    """Two paths diverging after a shared LUT and reconverging at the next one:
    one distinct LUT each, six distinct nodes each."""
    head = [N_("s0"), L_("shared_a")]
    tail = [N_("t0"), L_("shared_b"), N_("t1")]
    a = _rec(0, "FF0/Q", head + [N_(f"a{i}") for i in range(3)] + [L_("la")]
             + [N_(f"a{i}") for i in range(3, 6)] + tail)
    b = _rec(1, "FF0/Q", head + [N_(f"b{i}") for i in range(3)] + [L_("lb")]
             + [N_(f"b{i}") for i in range(3, 6)] + tail)
    return a, b


# -- count_pairings --------------------------------------------------------------

@pytest.mark.parametrize("npr,npf,expected", [(25015, 25000, 625_350_105), (3, 2, 4), (0, 0, 0), (1, 1, 0)])
def test_count_pairings(npr, npf, expected):
    assert count_pairings(npr, npf) == expected


def test_count_pairings_large_is_exact():
    n = 2**31
    assert count_pairings(n, 0) == n * (n - 1) // 2


def test_count_pairings_negative():
    with pytest.raises(PufVarError):
        count_pairings(-1, 0)


# -- classify_pair ---------------------------------------------------------------

def test_self_pair():
    a, _ = bubble_pair()
    c = classify_pair(a, a)
    assert (c.L, c.N, c.admissible, c.config_tag) == (0, 0, False, ConfigTag.INADMISSIBLE)


def test_bubble():
    a, b = bubble_pair()
    c = classify_pair(a, b)
    assert (c.L, c.N) == (2, 12)
    assert c.admissible and c.config_tag is ConfigTag.BUBBLE


def test_launch_ff_counts_as_lut():
    a = _rec(0, "FF0/Q", [N_("x"), L_("g"), N_("y")])
    b = _rec(1, "FF1/Q", [N_("z"), L_("g"), N_("y")])
    c = classify_pair(a, b)
    assert (c.L, c.N) == (2, 2) and c.admissible


def test_one_extra_lut():
    a = _rec(0, "FF0/Q", [N_("x"), L_("g"), N_("y")])
    b = _rec(1, "FF0/Q", [N_("x"), L_("g"), N_("y"), L_("h"), N_("w")])
    c = classify_pair(a, b)
    assert c.config_tag is ConfigTag.ONE_EXTRA_LUT and not c.admissible and c.L == 1


def test_different_capture_inadmissible():
    a = _rec(0, "FF0/Q", [N_("x"), L_("g"), N_("y")], capture="C0")
    b = _rec(1, "FF1/Q", [N_("x"), L_("h"), N_("y")], capture="C1")
    assert not classify_pair(a, b).admissible


def test_polarity_mismatch():
    a, b = bubble_pair()
    b = PathRecord(b.path_id, "F", b.launch_ff, b.capture_ff, b.components)
    with pytest.raises(PufVarError) as exc:
        classify_pair(a, b)
    assert exc.value.code == "POLARITY_MISMATCH"


def test_multiset_nodes_knob():
    a = _rec(0, "FF0/Q", [N_("x"), N_("x"), L_("g"), N_("y")])
    b = _rec(1, "FF1/Q", [N_("x"), L_("h"), N_("y")])
    assert classify_pair(a, b).N == 0
    assert classify_pair(a, b, multiset_nodes=True).N == 1


@settings(max_examples=10)
@given(st.integers(min_value=0, max_value=2**32), st.data())
def test_classify_symmetry(seed, data):
    d = small_design(seed)
    i = data.draw(st.integers(0, len(d.paths) - 1))
    j = data.draw(st.integers(0, len(d.paths) - 1))
    a, b = d.paths[i], d.paths[j]
    if a.polarity != b.polarity:
        return
    assert classify_pair(a, b) == classify_pair(b, a)


# -- build_index vs brute force ------------------------------------------------------

def _check_against_oracle(d):
    census, members, one_extra = brute_force_census(d)
    ix = build_index(d, l_classes=None, min_members=0)
    assert ix.census == dict(census)
    assert set(ix.subgroups) == set(members)
    for key, pairs in members.items():
        assert ix.subgroups[key].tolist() == [list(p) for p in pairs]
    assert ix.tag_counts["ONE_EXTRA_LUT"] == one_extra
    assert sum(ix.tag_counts.values()) == count_pairings(d.npr, d.npf)
    return ix


@settings(max_examples=10)
@given(st.integers(min_value=0, max_value=2**32))
def test_index_matches_brute_force(seed):
    d = small_design(seed)
    assert len(d.paths) <= 200
    ix = _check_against_oracle(d)
    assert all(L % 2 == 0 for L, _ in ix.census)


def test_index_matches_brute_force_skip_edges():
    _check_against_oracle(small_design(5, skip_prob=0.3, fanout=3))


def test_toy_four_paths():
    d = generate_design(n_layers=1, luts_per_layer=1, fanout=2, n_inputs=2, n_outputs=1, skip_prob=0.0)
    ix = build_index(d, l_classes=None, min_members=0)
    # one rising and one falling bubble
    assert list(ix.census.values()) == [2]
    (L, N), = ix.census
    assert L == 2
    assert ix.members(L, N).tolist() == [[0, 1], [2, 3]]
    assert ix.tag_counts["BUBBLE"] == 2


def test_filter_l2_single_bubble():
    a, b = bubble_pair()
    c = _rec(2, "FF9/Q", [N_("q"), L_("z"), N_("r")], capture="OTHER/D")
    d = FabricDesign([a, b, c])
    ix = build_index(d, l_classes={2}, min_members=0)
    assert list(ix.subgroups) == [(2, 12)]
    assert ix.members(2, 12).tolist() == [[0, 1]]


def test_l_class_filter_keeps_full_census(tiny_design):
    full = build_index(tiny_design, None, 0)
    part = build_index(tiny_design, {4}, 0)
    assert part.census == full.census
    assert all(L == 4 for L, _ in part.subgroups)


def test_threads_do_not_change_index(tiny_design):
    a = build_index(tiny_design, None, 0, threads=1)
    b = build_index(tiny_design, None, 0, threads=3)
    assert a.census == b.census
    for k in a.subgroups:
        assert np.array_equal(a.subgroups[k], b.subgroups[k])


def test_capacity_exceeded(tiny_design):
    with pytest.raises(PufVarError) as exc:
        build_index(tiny_design, None, 0, capacity=1)
    assert exc.value.code == "CAPACITY_EXCEEDED"


# -- screening -----------------------------------------------------------------

def test_membership_status():
    assert membership_status(150, 200) == (False, "membership")
    assert membership_status(200, 200) == (True, "ok")


def test_outlier_mask_tenfold():
    v = np.full(250, 1.0) + np.linspace(0, 0.1, 250)
    v[17] = 10.0
    mask = outlier_mask(v, 3.0)
    assert mask[17] and mask.sum() == 1


def test_outlier_mask_matches_loop(rng):
    v = rng.chisquare(20, size=60)
    mask = outlier_mask(v, 2.0)
    for i in range(len(v)):
        others = np.delete(v, i)
        assert mask[i] == (v[i] > others.mean() + 2.0 * others.std(ddof=1))


def _index_with(sizes):
    from pufvar.pairing import PairingIndex
    subgroups = {(2, n): np.zeros((size, 2), dtype=np.int64) for n, size in sizes.items()}
    census = {k: len(v) for k, v in subgroups.items()}
    return PairingIndex(subgroups, census, {}, {}, 0, 0)


def test_screen_reasons(rng):
    ix = _index_with({1: 150, 2: 250, 3: 250})
    var = {(2, 1): rng.normal(100, 1, 150), (2, 2): np.linspace(99.0, 101.0, 250),
           (2, 3): np.full(250, 100.0) + rng.normal(0, 1, 250)}
    var[(2, 3)][5] = 1000.0
    out = screen_subclasses(ix, var, 200, 3.0)
    assert out.screening[(2, 1)] == (False, "membership")
    assert out.screening[(2, 3)] == (False, "outlier")
    assert out.included() == [(2, 2)]
    off = screen_subclasses(ix, var, 200, float("inf"))
    assert off.included() == [(2, 2), (2, 3)]


def test_clean_subclass_strict_rule_rate():
    """With the strict leave-one-out 3-sigma rule, a clean 250-member subclass
    of chi-square pair variances is flagged far more often than 1% of the
    time; this documents why screening is off by default."""
    rng = np.random.default_rng(7)
    flagged = sum(outlier_mask(rng.chisquare(99, 250) / 99, 3.0).any() for _ in range(400))
    assert flagged / 400 > 0.2


# -- files -----------------------------------------------------------------------

def test_census_and_bins_round_trip(tmp_path, tiny_design):
    ix = build_index(tiny_design, None, 3)
    write_census(ix, tmp_path / "pair_census.csv")
    write_pair_bins(ix, tmp_path)
    back = read_index(tmp_path / "pair_census.csv", tmp_path, ix.npr, ix.npf, 3)
    assert back.census == ix.census
    for k, v in ix.subgroups.items():
        assert np.array_equal(back.subgroups[k], v)
    assert back.screening == ix.screening
    raw = (tmp_path / "pairs_{}_{}.bin".format(*next(iter(ix.subgroups)))).read_bytes()
    first = next(iter(ix.subgroups.values()))[0]
    assert int.from_bytes(raw[:4], "little") == first[0]


def test_census_bytes_deterministic(tmp_path, tiny_design):
    write_census(build_index(tiny_design, None, 3), tmp_path / "a.csv")
    write_census(build_index(tiny_design, None, 3), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
