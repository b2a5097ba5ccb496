"""Synthetic Bookshelf designs for desk-scale experiments.

Cells get a hidden "intended" location; nets connect spatial neighbours of
that layout, IO pads on the periphery and fixed macros anchor it. A placer
that recovers the hidden structure scores far below a clumped start.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .netlist import MOVABLE, TERMINAL, Netlist, Node, Placement, build_netlist

ROW_HEIGHT = 12.0
_WIDTHS = np.array([3, 4, 5, 6, 8, 10, 12, 16], dtype=float)
_WIDTH_P = np.array([0.08, 0.16, 0.18, 0.18, 0.16, 0.12, 0.08, 0.04])
_DEGREES = np.array([2, 2, 2, 2, 3, 3, 4, 5])

# name -> (movable cells, seed); the training set uses the two smallest
TOY_DESIGNS = {
    "toy500": (500, 5),
    "toy1k": (1000, 11),
    "toy2k": (2000, 23),
    "toy4k": (4000, 47),
}


def make_toy_design(
    n_cells: int,
    seed: int = 0,
    *,
    utilization: float = 0.55,
    pad_ratio: float = 0.4,
    n_macros: int = 2,
    macro_pins: int = 24,
    name: str | None = None,
) -> tuple[Netlist, Placement]:
    rng = np.random.default_rng(seed)
    widths = rng.choice(_WIDTHS, size=n_cells, p=_WIDTH_P)
    cell_area = float(np.sum(widths) * ROW_HEIGHT)
    macro_frac = 0.06
    side = np.sqrt(cell_area / utilization / (1.0 - macro_frac * n_macros))
    n_rows = int(np.ceil(side / ROW_HEIGHT))
    H = n_rows * ROW_HEIGHT
    W = float(np.ceil(side))

    nodes: list[Node] = []
    # macros: square blocks in the interior, kept apart
    macros = []
    msize = float(np.round(np.sqrt(macro_frac * W * H)))
    for _ in range(n_macros):
        for _try in range(200):
            mx = float(np.round(rng.uniform(0.1 * W, 0.9 * W - msize)))
            my = float(np.round(rng.uniform(0.1 * H, 0.9 * H - msize)))
            if all(abs(mx - ox) > msize + 5 or abs(my - oy) > msize + 5 for ox, oy in macros):
                macros.append((mx, my))
                break

    def inside_macro(px, py):
        hit = np.zeros(len(px), dtype=bool)
        for mx, my in macros:
            hit |= (px > mx - 4) & (px < mx + msize + 4) & (py > my - 4) & (py < my + msize + 4)
        return hit

    hx = rng.uniform(0, W, size=n_cells)
    hy = rng.uniform(0, H, size=n_cells)
    bad = inside_macro(hx, hy)
    while bad.any():
        hx[bad] = rng.uniform(0, W, size=bad.sum())
        hy[bad] = rng.uniform(0, H, size=bad.sum())
        bad = inside_macro(hx, hy)

    for i in range(n_cells):
        # .pl carries no hint of the hidden layout: movable cells start at the center
        nodes.append(Node(i, f"o{i}", float(widths[i]), ROW_HEIGHT, MOVABLE,
                          float(np.floor((W - widths[i]) / 2)), float(np.floor((H - ROW_HEIGHT) / 2))))
    for k, (mx, my) in enumerate(macros):
        nodes.append(Node(len(nodes), f"m{k}", msize, msize, TERMINAL, mx, my))

    tree = cKDTree(np.column_stack([hx, hy]))

    def cell_pin(i):
        w = widths[i]
        return (i, float(np.round(rng.uniform(0, w) * 2) / 2), float(np.round(rng.uniform(0, ROW_HEIGHT) * 2) / 2))

    nets = []
    _, knn = tree.query(np.column_stack([hx, hy]), k=min(9, n_cells))
    for i in range(n_cells):
        d = int(rng.choice(_DEGREES))
        others = rng.choice(knn[i, 1:], size=min(d - 1, knn.shape[1] - 1), replace=False)
        nets.append((f"n{len(nets)}", [cell_pin(i)] + [cell_pin(int(j)) for j in others]))

    # IO pads evenly spaced along the boundary, each tied to its nearest cells
    n_pads = int(pad_ratio * n_cells)
    perim = 2 * (W + H)
    for k in range(n_pads):
        s = (k + 0.5) * perim / n_pads
        if s < W:
            px, py = s, 0.0
        elif s < W + H:
            px, py = W - 1, s - W
        elif s < 2 * W + H:
            px, py = 2 * W + H - s, H - 1
        else:
            px, py = 0.0, perim - s
        px, py = float(np.floor(min(px, W - 1))), float(np.floor(min(py, H - 1)))
        pid = len(nodes)
        nodes.append(Node(pid, f"p{k}", 1.0, 1.0, TERMINAL, px, py))
        near = np.atleast_1d(tree.query([px, py], k=int(rng.integers(1, 3)))[1])
        nets.append((f"n{len(nets)}", [(pid, 0.5, 0.5)] + [cell_pin(int(j)) for j in near]))

    for k, (mx, my) in enumerate(macros):
        mid = n_cells + k
        for q in range(macro_pins):
            s = (q + 0.5) / macro_pins * 4 * msize
            side_i, t = divmod(s, msize)
            ox, oy = [(t, 0.0), (msize, t), (msize - t, msize), (0.0, msize - t)][int(side_i)]
            near = np.atleast_1d(tree.query([mx + ox, my + oy], k=int(rng.integers(1, 3)))[1])
            nets.append((f"n{len(nets)}", [(mid, float(np.round(ox)), float(np.round(oy)))]
                         + [cell_pin(int(j)) for j in near]))

    nl = build_netlist(nodes, nets, (0.0, 0.0, W, H), row_height=ROW_HEIGHT,
                       site_width=1.0, name=name or f"toy{n_cells}")
    return nl, Placement.reference(nl)


def toy_design(name: str) -> tuple[Netlist, Placement]:
    n, seed = TOY_DESIGNS[name]
    return make_toy_design(n, seed, name=name)


# placer settings per toy design (delta_hpwl_ref ~ 0.5% of the converged HPWL)
TOY_CONFIGS = {
    "toy500": {"grid_dims": 32, "delta_hpwl_ref": 75, "lambda_init_scale": 1e-3, "max_iterations": 1000},
    "toy1k": {"grid_dims": 32, "delta_hpwl_ref": 125, "lambda_init_scale": 1e-3, "max_iterations": 1000},
    "toy2k": {"grid_dims": 32, "delta_hpwl_ref": 230, "lambda_init_scale": 1e-3, "max_iterations": 1000},
    "toy4k": {"grid_dims": 32, "delta_hpwl_ref": 500, "lambda_init_scale": 1e-3, "max_iterations": 1000},
}


def write_toy_designs(root) -> list:
    """Regenerate every toy design under ``root/<name>/`` with a ``<name>.cfg``."""
    from pathlib import Path

    from .config import dump_config
    from .netlist import write_bookshelf

    out = []
    for name in TOY_DESIGNS:
        nl, pl = toy_design(name)
        d = Path(root) / name
        out.append(write_bookshelf(nl, pl, d, name))
        dump_config(TOY_CONFIGS[name], d / f"{name}.cfg")
    return out
