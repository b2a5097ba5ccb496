"""Netlist data model, Bookshelf I/O and exact half-perimeter wirelength.

Coordinates follow the Bookshelf convention: a node's ``(x, y)`` is its
lower-left corner. Pin offsets are stored relative to that corner, so a pin
sits at ``(x[node] + dx, y[node] + dy)``. The ``.nets`` file gives offsets
relative to the node center; the parser converts on the way in and the
writer converts back.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

MOVABLE = "movable"
TERMINAL = "terminal"
TERMINAL_NI = "terminal_NI"


class ParseError(ValueError):
    """Malformed Bookshelf input; carries the file and 1-based line number."""

    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class ValidationError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class Node:
    id: int
    name: str
    width: float
    height: float
    kind: str = MOVABLE
    # reference location (lower-left) from the .pl file; authoritative for terminals
    x: float = 0.0
    y: float = 0.0

    @property
    def movable(self) -> bool:
        return self.kind == MOVABLE


@dataclass(frozen=True)
class Pin:
    node_id: int
    net_id: int
    offset_x: float
    offset_y: float
    direction: str = "B"


@dataclass(frozen=True)
class Net:
    name: str
    pin_ids: tuple[int, ...]


@dataclass(frozen=True)
class Netlist:
    """Immutable netlist. Array views are built lazily and cached."""

    nodes: tuple[Node, ...]
    pins: tuple[Pin, ...]
    nets: tuple[Net, ...]
    region: tuple[float, float, float, float]  # xl, yl, xh, yh
    row_height: float = 1.0
    site_width: float = 1.0
    name: str = "design"

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_nets(self) -> int:
        return len(self.nets)

    @property
    def num_pins(self) -> int:
        return len(self.pins)

    @property
    def width(self) -> float:
        return self.region[2] - self.region[0]

    @property
    def height(self) -> float:
        return self.region[3] - self.region[1]

    @cached_property
    def node_w(self) -> np.ndarray:
        return np.array([n.width for n in self.nodes], dtype=float)

    @cached_property
    def node_h(self) -> np.ndarray:
        return np.array([n.height for n in self.nodes], dtype=float)

    @cached_property
    def movable(self) -> np.ndarray:
        return np.array([n.movable for n in self.nodes], dtype=bool)

    @cached_property
    def blocks_density(self) -> np.ndarray:
        """Fixed nodes that occupy placement area (terminal_NI does not)."""
        return np.array([n.kind == TERMINAL for n in self.nodes], dtype=bool)

    @cached_property
    def ref_x(self) -> np.ndarray:
        return np.array([n.x for n in self.nodes], dtype=float)

    @cached_property
    def ref_y(self) -> np.ndarray:
        return np.array([n.y for n in self.nodes], dtype=float)

    @cached_property
    def node_index(self) -> dict[str, int]:
        return {n.name: n.id for n in self.nodes}

    @cached_property
    def _pin_order(self) -> np.ndarray:
        # pins concatenated net by net
        if not self.nets:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.asarray(n.pin_ids, dtype=np.int64) for n in self.nets])

    @cached_property
    def net_start(self) -> np.ndarray:
        """CSR offsets into the net-ordered pin arrays (length num_nets + 1)."""
        degrees = np.array([len(n.pin_ids) for n in self.nets], dtype=np.int64)
        return np.concatenate([[0], np.cumsum(degrees)]).astype(np.int64)

    @cached_property
    def net_degree(self) -> np.ndarray:
        return np.diff(self.net_start)

    @cached_property
    def pin_node(self) -> np.ndarray:
        """Node index of each pin, in net order."""
        nodes = np.array([p.node_id for p in self.pins], dtype=np.int64)
        return nodes[self._pin_order] if len(nodes) else nodes

    @cached_property
    def pin_net(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_nets, dtype=np.int64), self.net_degree)

    @cached_property
    def pin_dx(self) -> np.ndarray:
        off = np.array([p.offset_x for p in self.pins], dtype=float)
        return off[self._pin_order] if len(off) else off

    @cached_property
    def pin_dy(self) -> np.ndarray:
        off = np.array([p.offset_y for p in self.pins], dtype=float)
        return off[self._pin_order] if len(off) else off

    @cached_property
    def node_nets(self) -> tuple[tuple[int, ...], ...]:
        """Nets incident to each node (sorted, unique)."""
        acc: list[set[int]] = [set() for _ in self.nodes]
        for p in self.pins:
            acc[p.node_id].add(p.net_id)
        return tuple(tuple(sorted(s)) for s in acc)

    @cached_property
    def net_nodes(self) -> tuple[tuple[int, ...], ...]:
        return tuple(
            tuple(sorted({self.pins[i].node_id for i in n.pin_ids})) for n in self.nets
        )

    def movable_area(self) -> float:
        return float(np.sum(self.node_w[self.movable] * self.node_h[self.movable]))


@dataclass(frozen=True, eq=False)
class Placement:
    """Lower-left coordinates of every node."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError(f"placement arrays disagree: {x.shape} vs {y.shape}")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.x)

    def centers(self, netlist: Netlist) -> tuple[np.ndarray, np.ndarray]:
        return self.x + 0.5 * netlist.node_w, self.y + 0.5 * netlist.node_h

    @classmethod
    def reference(cls, netlist: Netlist) -> "Placement":
        return cls(netlist.ref_x, netlist.ref_y)


def pin_positions(netlist: Netlist, x: np.ndarray, y: np.ndarray):
    """Absolute pin coordinates in net order."""
    return x[netlist.pin_node] + netlist.pin_dx, y[netlist.pin_node] + netlist.pin_dy


def net_bboxes(netlist: Netlist, x: np.ndarray, y: np.ndarray):
    """Per-net (xmin, xmax, ymin, ymax) arrays. Nets must be non-empty."""
    px, py = pin_positions(netlist, x, y)
    starts = netlist.net_start[:-1]
    return (
        np.minimum.reduceat(px, starts),
        np.maximum.reduceat(px, starts),
        np.minimum.reduceat(py, starts),
        np.maximum.reduceat(py, starts),
    )


def net_hpwl(netlist: Netlist, placement: Placement) -> np.ndarray:
    if netlist.num_nets == 0:
        return np.zeros(0)
    xmin, xmax, ymin, ymax = net_bboxes(netlist, placement.x, placement.y)
    return (xmax - xmin) + (ymax - ymin)


def hpwl(netlist: Netlist, placement: Placement) -> float:
    """Exact half-perimeter wirelength summed over all nets."""
    return float(np.sum(net_hpwl(netlist, placement)))


def validate(netlist: Netlist) -> list[str]:
    """Return every invariant violation; an empty list means the netlist is valid."""
    out: list[str] = []
    xl, yl, xh, yh = netlist.region
    if not (xh > xl and yh > yl):
        out.append(f"degenerate region {netlist.region}")
    seen: set[str] = set()
    for i, n in enumerate(netlist.nodes):
        if n.id != i:
            out.append(f"node {n.name!r} has id {n.id}, expected {i}")
        if n.name in seen:
            out.append(f"duplicate node name {n.name!r}")
        seen.add(n.name)
        if not (n.width > 0 and n.height > 0):
            out.append(f"node {n.name!r} has non-positive size {n.width}x{n.height}")
        if n.kind not in (MOVABLE, TERMINAL, TERMINAL_NI):
            out.append(f"node {n.name!r} has unknown kind {n.kind!r}")
    nn_ = len(netlist.nodes)
    owner: dict[int, int] = {}
    for j, net in enumerate(netlist.nets):
        if len(net.pin_ids) < 2:
            out.append(f"single-pin net {net.name!r} ({len(net.pin_ids)} pins)")
        for pid in net.pin_ids:
            if not 0 <= pid < len(netlist.pins):
                out.append(f"net {net.name!r} lists unknown pin {pid}")
            elif pid in owner:
                out.append(f"pin {pid} listed by nets {owner[pid]} and {j}")
            else:
                owner[pid] = j
    tol = 1e-9
    for i, p in enumerate(netlist.pins):
        if not 0 <= p.node_id < nn_:
            out.append(f"dangling pin {i}: node_id {p.node_id} out of range")
            continue
        if not 0 <= p.net_id < len(netlist.nets):
            out.append(f"dangling pin {i}: net_id {p.net_id} out of range")
            continue
        if owner.get(i) != p.net_id:
            out.append(f"pin {i} claims net {p.net_id} but is listed by {owner.get(i)}")
        node = netlist.nodes[p.node_id]
        if not (-tol <= p.offset_x <= node.width + tol and -tol <= p.offset_y <= node.height + tol):
            out.append(f"pin {i} offset ({p.offset_x}, {p.offset_y}) outside node {node.name!r}")
    return out


def build_netlist(
    nodes: list[Node],
    net_members: list[tuple[str, list[tuple[int, float, float]]]],
    region,
    *,
    row_height: float = 1.0,
    site_width: float = 1.0,
    name: str = "design",
) -> Netlist:
    """Assemble a netlist from nets given as ``(name, [(node_id, dx, dy), ...])``.

    Offsets are relative to the node's lower-left corner.
    """
    pins: list[Pin] = []
    nets: list[Net] = []
    for j, (net_name, members) in enumerate(net_members):
        ids = []
        for node_id, dx, dy in members:
            ids.append(len(pins))
            pins.append(Pin(node_id, j, float(dx), float(dy)))
        nets.append(Net(net_name, tuple(ids)))
    return Netlist(
        tuple(nodes), tuple(pins), tuple(nets), tuple(float(v) for v in region),
        row_height=row_height, site_width=site_width, name=name,
    )


# --------------------------------------------------------------------------
# Bookshelf reader
# --------------------------------------------------------------------------


def _content_lines(path: Path):
    """Yield (lineno, tokens) for non-blank, non-comment lines; skips the UCLA header."""
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line or line.startswith("UCLA"):
                continue
            yield lineno, line


def _kv(line: str):
    key, _, val = line.partition(":")
    return key.strip(), val.strip()


def _float(path, lineno, tok):
    try:
        return float(tok)
    except ValueError:
        raise ParseError(path, lineno, f"expected a number, got {tok!r}") from None


def _read_aux(path: Path) -> dict[str, Path]:
    files: dict[str, Path] = {}
    for lineno, line in _content_lines(path):
        _, sep, rest = line.partition(":")
        if not sep:
            raise ParseError(path, lineno, "expected 'RowBasedPlacement : <files>'")
        for tok in rest.split():
            ext = os.path.splitext(tok)[1].lstrip(".").lower()
            files[ext] = path.parent / tok
    for ext in ("nodes", "nets", "pl"):
        if ext not in files:
            raise ParseError(path, 1, f"aux file does not reference a .{ext} file")
    return files


def _read_nodes(path: Path):
    specs = []
    declared = None
    for lineno, line in _content_lines(path):
        if line.startswith("NumNodes") or line.startswith("NumTerminals"):
            key, val = _kv(line)
            try:
                if key == "NumNodes":
                    declared = int(val)
            except ValueError:
                raise ParseError(path, lineno, f"bad count {val!r}") from None
            continue
        tok = line.split()
        if len(tok) < 3:
            raise ParseError(path, lineno, f"node line needs name width height: {line!r}")
        kind = MOVABLE
        if len(tok) > 3:
            if tok[3] == "terminal":
                kind = TERMINAL
            elif tok[3] == "terminal_NI":
                kind = TERMINAL_NI
            else:
                raise ParseError(path, lineno, f"unknown node attribute {tok[3]!r}")
        specs.append((tok[0], _float(path, lineno, tok[1]), _float(path, lineno, tok[2]), kind))
    if declared is not None and declared != len(specs):
        raise ParseError(path, 0, f"NumNodes says {declared} but {len(specs)} nodes listed")
    return specs


def _read_nets(path: Path):
    """Return [(net_name, [(node_name, dx_center, dy_center, dir, lineno)])]."""
    nets = []
    current = None
    remaining = 0
    for lineno, line in _content_lines(path):
        if line.startswith("NumNets") or line.startswith("NumPins"):
            continue
        if line.startswith("NetDegree"):
            if remaining:
                raise ParseError(path, lineno, f"previous net is missing {remaining} pins")
            key, val = _kv(line)
            tok = val.split()
            if not tok:
                raise ParseError(path, lineno, "NetDegree without a count")
            try:
                remaining = int(tok[0])
            except ValueError:
                raise ParseError(path, lineno, f"bad net degree {tok[0]!r}") from None
            name = tok[1] if len(tok) > 1 else f"net{len(nets)}"
            current = (name, [])
            nets.append(current)
            continue
        if current is None or remaining == 0:
            raise ParseError(path, lineno, f"pin line outside a NetDegree block: {line!r}")
        head, sep, tail = line.partition(":")
        tok = head.split()
        node_name = tok[0]
        direction = tok[1] if len(tok) > 1 else "B"
        dx = dy = 0.0
        if sep:
            off = tail.split()
            if len(off) < 2:
                raise ParseError(path, lineno, f"pin offset needs two numbers: {line!r}")
            dx, dy = _float(path, lineno, off[0]), _float(path, lineno, off[1])
        current[1].append((node_name, dx, dy, direction, lineno))
        remaining -= 1
    if remaining:
        raise ParseError(path, 0, f"last net is missing {remaining} pins")
    return nets


def _read_pl(path: Path) -> dict[str, tuple[float, float]]:
    pos = {}
    for lineno, line in _content_lines(path):
        tok = line.split(":")[0].split()
        if len(tok) < 3:
            raise ParseError(path, lineno, f"placement line needs name x y: {line!r}")
        pos[tok[0]] = (_float(path, lineno, tok[1]), _float(path, lineno, tok[2]))
    return pos


def _read_scl(path: Path):
    """Return (region, row_height, site_width) from CoreRow blocks."""
    rows = []
    row: dict[str, float] = {}
    for lineno, line in _content_lines(path):
        if line.startswith("NumRows"):
            continue
        if line.startswith("CoreRow"):
            row = {}
            continue
        if line.startswith("End"):
            for key in ("Coordinate", "Height", "SubrowOrigin", "NumSites"):
                if key not in row:
                    raise ParseError(path, lineno, f"row missing {key}")
            rows.append(row)
            continue
        # "SubrowOrigin : 0 NumSites : 100" carries two pairs on one line
        tok = line.replace(":", " ").split()
        for k, v in zip(tok[0::2], tok[1::2]):
            try:
                row[k] = float(v)
            except ValueError:
                row[k] = v
    if not rows:
        raise ParseError(path, 0, "no CoreRow entries")
    xl = min(r["SubrowOrigin"] for r in rows)
    xh = max(r["SubrowOrigin"] + r["NumSites"] * r.get("Sitespacing", 1.0) for r in rows)
    yl = min(r["Coordinate"] for r in rows)
    yh = max(r["Coordinate"] + r["Height"] for r in rows)
    return (xl, yl, xh, yh), rows[0]["Height"], rows[0].get("Sitewidth", 1.0)


def parse_bookshelf(aux_path) -> tuple[Netlist, Placement]:
    """Read a Bookshelf design. Raises ParseError or ValidationError."""
    aux_path = Path(aux_path)
    files = _read_aux(aux_path)
    specs = _read_nodes(files["nodes"])
    pos = _read_pl(files["pl"])
    nodes = []
    for i, (name, w, h, kind) in enumerate(specs):
        x, y = pos.get(name, (0.0, 0.0))
        nodes.append(Node(i, name, w, h, kind, x, y))
    index = {n.name: n.id for n in nodes}
    if len(index) != len(nodes):
        raise ValidationError(["duplicate node names in .nodes file"])
    raw_nets = _read_nets(files["nets"])
    problems = []
    net_members = []
    for net_name, members in raw_nets:
        resolved = []
        for node_name, dx, dy, _, lineno in members:
            if node_name not in index:
                problems.append(
                    f"net {net_name!r} references undeclared node {node_name!r} "
                    f"({files['nets']}:{lineno})"
                )
                continue
            n = nodes[index[node_name]]
            resolved.append((n.id, dx + 0.5 * n.width, dy + 0.5 * n.height))
        net_members.append((net_name, resolved))
    if problems:
        raise ValidationError(problems)
    if "scl" in files and files["scl"].exists():
        region, row_h, site_w = _read_scl(files["scl"])
    else:
        xs = [n.x for n in nodes] + [n.x + n.width for n in nodes]
        ys = [n.y for n in nodes] + [n.y + n.height for n in nodes]
        region = (min(xs), min(ys), max(xs), max(ys)) if nodes else (0.0, 0.0, 1.0, 1.0)
        row_h, site_w = 1.0, 1.0
    nl = build_netlist(
        nodes, net_members, region, row_height=row_h, site_width=site_w,
        name=aux_path.stem,
    )
    violations = validate(nl)
    if violations:
        raise ValidationError(violations)
    return nl, Placement.reference(nl)


# --------------------------------------------------------------------------
# Bookshelf writer
# --------------------------------------------------------------------------


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def _pl_suffix(node: Node) -> str:
    if node.kind == TERMINAL:
        return " /FIXED"
    if node.kind == TERMINAL_NI:
        return " /FIXED_NI"
    return ""


def write_placement(netlist: Netlist, placement: Placement, path) -> None:
    """Write a Bookshelf .pl file. Terminals carry the /FIXED marker."""
    lines = ["UCLA pl 1.0", ""]
    for n in netlist.nodes:
        lines.append(
            f"{n.name}\t{_fmt(placement.x[n.id])}\t{_fmt(placement.y[n.id])}\t: N{_pl_suffix(n)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_bookshelf(netlist: Netlist, placement: Placement, directory, name: str | None = None) -> Path:
    """Write the full .aux/.nodes/.nets/.pl/.scl suite; returns the .aux path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = name or netlist.name
    nodes = netlist.nodes
    n_term = sum(not n.movable for n in nodes)
    lines = ["UCLA nodes 1.0", "", f"NumNodes : {len(nodes)}", f"NumTerminals : {n_term}"]
    for n in nodes:
        suffix = "" if n.movable else f"\t{n.kind}"
        lines.append(f"\t{n.name}\t{_fmt(n.width)}\t{_fmt(n.height)}{suffix}")
    (directory / f"{name}.nodes").write_text("\n".join(lines) + "\n")

    lines = ["UCLA nets 1.0", "", f"NumNets : {netlist.num_nets}", f"NumPins : {netlist.num_pins}"]
    for net in netlist.nets:
        lines.append(f"NetDegree : {len(net.pin_ids)}\t{net.name}")
        for pid in net.pin_ids:
            p = netlist.pins[pid]
            n = nodes[p.node_id]
            dx = p.offset_x - 0.5 * n.width
            dy = p.offset_y - 0.5 * n.height
            lines.append(f"\t{n.name}\t{p.direction} : {_fmt(dx)}\t{_fmt(dy)}")
    (directory / f"{name}.nets").write_text("\n".join(lines) + "\n")

    write_placement(netlist, placement, directory / f"{name}.pl")

    xl, yl, xh, yh = netlist.region
    rh, sw = netlist.row_height, netlist.site_width
    n_rows = max(1, int(round((yh - yl) / rh)))
    n_sites = max(1, int(round((xh - xl) / sw)))
    lines = ["UCLA scl 1.0", "", f"NumRows : {n_rows}", ""]
    for r in range(n_rows):
        lines += [
            "CoreRow Horizontal",
            f"  Coordinate    :   {_fmt(yl + r * rh)}",
            f"  Height        :   {_fmt(rh)}",
            f"  Sitewidth     :   {_fmt(sw)}",
            f"  Sitespacing   :   {_fmt(sw)}",
            "  Siteorient    :   1",
            "  Sitesymmetry  :   1",
            f"  SubrowOrigin  :   {_fmt(xl)}\tNumSites  :  {n_sites}",
            "End",
        ]
    (directory / f"{name}.scl").write_text("\n".join(lines) + "\n")
    (directory / f"{name}.wts").write_text("UCLA wts 1.0\n")
    aux = directory / f"{name}.aux"
    aux.write_text(
        f"RowBasedPlacement : {name}.nodes {name}.nets {name}.wts {name}.pl {name}.scl\n"
    )
    return aux
