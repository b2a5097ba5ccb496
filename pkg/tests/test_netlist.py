import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlplace.netlist import (
    MOVABLE, TERMINAL, TERMINAL_NI, Node, ParseError, Placement, ValidationError,
    build_netlist, hpwl, parse_bookshelf, validate, write_bookshelf, write_placement,
)

from conftest import fixture_aux, random_netlist


def two_point_net(p, q):
    nodes = [Node(0, "a", 0.0, 0.0, MOVABLE), Node(1, "b", 0.0, 0.0, MOVABLE)]
    nl = build_netlist(nodes, [("n", [(0, 0.0, 0.0), (1, 0.0, 0.0)])], (0, 0, 10, 10))
    return nl, Placement(np.array([p[0], q[0]], float), np.array([p[1], q[1]], float))


def test_tiny3_counts(tiny3):
    nl, pl = tiny3
    assert (nl.num_nodes, nl.num_nets, nl.num_pins) == (3, 2, 5)
    assert [n.kind for n in nl.nodes] == [MOVABLE, MOVABLE, TERMINAL]
    assert nl.region == (0.0, 0.0, 10.0, 4.0)


def test_tiny3_hpwl_by_hand(tiny3):
    nl, pl = tiny3
    # n0: pins (2.5, 1.5), (5.5, 2.5) -> 4 ; n1: centers -> 5.5 + 2
    assert hpwl(nl, pl) == pytest.approx(11.5, abs=1e-12)


def test_mixed8_parses_optional_offsets_and_terminal_ni(mixed8):
    nl, pl = mixed8
    assert (nl.num_nodes, nl.num_nets, nl.num_pins) == (8, 5, 14)
    kinds = {n.name: n.kind for n in nl.nodes}
    assert kinds["pad_in"] == TERMINAL and kinds["pad_ni"] == TERMINAL_NI
    assert nl.nets[1].name == "net1"  # unnamed net gets a positional name
    # pin without offsets sits at the node center
    a = nl.nodes[0]
    pin = next(p for p in nl.pins if p.node_id == 0)
    assert (pin.offset_x, pin.offset_y) == (a.width / 2, a.height / 2)


def test_empty_nets_section():
    nl, _ = parse_bookshelf(fixture_aux("empty_nets"))
    assert nl.num_nets == 0
    assert validate(nl) == []


def test_undeclared_node_is_named(tmp_path):
    src = fixture_aux("tiny3").parent
    for f in src.iterdir():
        (tmp_path / f.name).write_text(f.read_text())
    nets = tmp_path / "tiny3.nets"
    nets.write_text(nets.read_text().replace("\tp0\tI : 0\t0", "\to999\tI : 0\t0"))
    with pytest.raises(ValidationError, match="o999"):
        parse_bookshelf(tmp_path / "tiny3.aux")


def test_bad_number_reports_line(tmp_path):
    src = fixture_aux("tiny3").parent
    for f in src.iterdir():
        (tmp_path / f.name).write_text(f.read_text())
    (tmp_path / "tiny3.nodes").write_text((src / "tiny3.nodes").read_text().replace("o1\t2\t1", "o1\tx\t1"))
    with pytest.raises(ParseError, match="tiny3.nodes:7"):
        parse_bookshelf(tmp_path / "tiny3.aux")


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        parse_bookshelf("/nonexistent/design.aux")


@pytest.mark.parametrize("p,q,expected", [((0, 0), (0, 0), 0.0), ((0, 0), (3, 4), 7.0)])
def test_hpwl_two_pins(p, q, expected):
    nl, pl = two_point_net(p, q)
    assert hpwl(nl, pl) == expected


def test_hpwl_two_nets():
    nodes = [Node(i, f"v{i}", 0.0, 0.0, MOVABLE) for i in range(5)]
    nets = [("a", [(0, 0, 0), (1, 0, 0), (2, 0, 0)]), ("b", [(3, 0, 0), (4, 0, 0)])]
    nl = build_netlist(nodes, nets, (0, 0, 10, 10))
    pl = Placement(np.array([1, 2, 4, 0, 1.0]), np.array([1, 5, 2, 0, 1.0]))
    assert hpwl(nl, pl) == 9.0


def test_validate_flags_single_pin_and_dangling():
    nodes = [Node(0, "a", 1, 1), Node(1, "b", 1, 1)]
    nl = build_netlist(nodes, [("solo", [(0, 0.5, 0.5)])], (0, 0, 4, 4))
    assert any("single-pin net" in v for v in validate(nl))
    nl2 = build_netlist(nodes, [("n", [(0, 0.5, 0.5), (7, 0.5, 0.5)])], (0, 0, 4, 4))
    assert any("dangling pin" in v for v in validate(nl2))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), dx=st.floats(-1e3, 1e3), dy=st.floats(-1e3, 1e3),
       s=st.floats(0.1, 10))
def test_hpwl_invariances(seed, dx, dy, s):
    nl, pl = random_netlist(12, 10, seed)
    h = hpwl(nl, pl)
    shifted = hpwl(nl, Placement(pl.x + dx, pl.y + dy))
    assert shifted == pytest.approx(h, rel=1e-9)
    # scaling coordinates and pin offsets together scales hpwl
    nodes = [Node(n.id, n.name, n.width * s, n.height * s, n.kind, n.x * s, n.y * s) for n in nl.nodes]
    nets = [(net.name, [(nl.pins[p].node_id, nl.pins[p].offset_x * s, nl.pins[p].offset_y * s)
                        for p in net.pin_ids]) for net in nl.nets]
    scaled = build_netlist(nodes, nets, tuple(v * s for v in nl.region))
    assert hpwl(scaled, Placement(pl.x * s, pl.y * s)) == pytest.approx(s * h, rel=1e-9)
    # pin order within a net does not matter
    rng = np.random.default_rng(seed)
    perm = [(net.name, [(nl.pins[p].node_id, nl.pins[p].offset_x, nl.pins[p].offset_y)
                        for p in rng.permutation(list(net.pin_ids))]) for net in nl.nets]
    assert hpwl(build_netlist(list(nl.nodes), perm, nl.region), pl) == pytest.approx(h, rel=1e-12)


def test_write_placement_round_trip_and_fixed_marker(tmp_path, tiny3):
    nl, pl = tiny3
    moved = Placement(pl.x + np.array([0.25, -1.5, 0.0]), pl.y + np.array([1 / 3, 0.0, 0.0]))
    write_placement(nl, moved, tmp_path / "out.pl")
    text = (tmp_path / "out.pl").read_text()
    assert "p0\t0\t3\t: N /FIXED" in text
    aux = write_bookshelf(nl, pl, tmp_path / "suite")
    (tmp_path / "suite" / "tiny3.pl").write_text(text)
    nl2, pl2 = parse_bookshelf(aux)
    np.testing.assert_array_equal(pl2.x, moved.x)
    np.testing.assert_array_equal(pl2.y, moved.y)


def test_write_placement_missing_directory(tmp_path, tiny3):
    nl, pl = tiny3
    with pytest.raises(OSError):
        write_placement(nl, pl, tmp_path / "no" / "such" / "dir.pl")


def _structure(nl):
    return ([(n.name, n.width, n.height, n.kind, n.x, n.y) for n in nl.nodes],
            [(net.name, [(nl.pins[p].node_id, nl.pins[p].offset_x, nl.pins[p].offset_y)
                         for p in net.pin_ids]) for net in nl.nets],
            nl.region, nl.row_height, nl.site_width)


@pytest.mark.parametrize("name", ["tiny3", "mixed8"])
def test_round_trip_fixed_point(tmp_path, name):
    nl, pl = parse_bookshelf(fixture_aux(name))
    aux1 = write_bookshelf(nl, pl, tmp_path / "a")
    nl1, pl1 = parse_bookshelf(aux1)
    aux2 = write_bookshelf(nl1, pl1, tmp_path / "b")
    assert _structure(nl1) == _structure(nl)
    for ext in ("nodes", "nets", "pl", "scl"):
        assert aux1.with_suffix(f".{ext}").read_text() == aux2.with_suffix(f".{ext}").read_text()
