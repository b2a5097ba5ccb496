from pathlib import Path

import numpy as np
import pytest

from rlplace.netlist import MOVABLE, TERMINAL, Node, Placement, build_netlist

FIXTURES = Path(__file__).parent / "fixtures"
DESIGNS = Path(__file__).resolve().parents[1] / "designs"


def fixture_aux(name: str) -> Path:
    return FIXTURES / name / f"{name}.aux"


def random_netlist(n_cells=20, n_nets=15, seed=0, n_fixed=2, size=40.0, max_degree=4):
    """Small random design with a couple of fixed pads, pins at random offsets."""
    rng = np.random.default_rng(seed)
    nodes = []
    for i in range(n_cells):
        w, h = rng.uniform(1.0, 3.0), rng.uniform(1.0, 2.0)
        nodes.append(Node(i, f"c{i}", w, h, MOVABLE, rng.uniform(0, size - w), rng.uniform(0, size - h)))
    for k in range(n_fixed):
        i = n_cells + k
        nodes.append(Node(i, f"p{k}", 1.0, 1.0, TERMINAL, rng.uniform(0, size - 1), rng.uniform(0, size - 1)))
    nets = []
    for j in range(n_nets):
        deg = int(rng.integers(2, max_degree + 1))
        members = rng.choice(len(nodes), size=deg, replace=False)
        pins = [(int(m), rng.uniform(0, nodes[m].width), rng.uniform(0, nodes[m].height)) for m in members]
        nets.append((f"n{j}", pins))
    nl = build_netlist(nodes, nets, (0.0, 0.0, size, size), name=f"rand{seed}")
    return nl, Placement.reference(nl)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


@pytest.fixture
def tiny3():
    from rlplace.netlist import parse_bookshelf

    return parse_bookshelf(fixture_aux("tiny3"))


@pytest.fixture
def mixed8():
    from rlplace.netlist import parse_bookshelf

    return parse_bookshelf(fixture_aux("mixed8"))


def central_fd(f, z, h=1e-6, idx=None):
    """Central differences of scalar ``f`` at ``z`` (optionally on a subset of entries)."""
    z = np.array(z, dtype=float)
    idx = range(z.size) if idx is None else idx
    out = np.zeros(z.size)
    flat = z.ravel()
    for i in idx:
        o = flat[i]
        flat[i] = o + h
        a = f(z)
        flat[i] = o - h
        b = f(z)
        flat[i] = o
        out[i] = (a - b) / (2 * h)
    return out.reshape(z.shape)


def norm_rel_err(g, fd):
    g, fd = np.ravel(g), np.ravel(fd)
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300))


def param_fd(p, loss, h=1e-6):
    """Central differences of ``loss()`` w.r.t. array ``p``, perturbed in place and restored."""
    orig = p.copy()

    def f(z):
        np.copyto(p, z)
        return loss()

    try:
        return central_fd(f, orig, h)
    finally:
        np.copyto(p, orig)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
