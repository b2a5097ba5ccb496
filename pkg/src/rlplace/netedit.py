"""Random netlist edits for robustness experiments.

Three edit types are drawn per step: add a node wired into 2..5 new nets,
add one net around an existing node, or remove a node together with its pins
(nets left with fewer than two pins are dropped). New nets connect a node to
1..4 others picked from its 3-hop neighborhood.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .netlist import MOVABLE, Netlist, Node, ValidationError, build_netlist, validate

log = logging.getLogger(__name__)

EDIT_TYPES = ("add_node", "add_net", "remove_node")


class NetlistExhausted(RuntimeError):
    """No movable node is left to edit."""


@dataclass(frozen=True)
class EditConfig:
    num_edits: int = 0
    rng_seed: int = 0
    edit_type_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    nets_per_node: tuple[int, int] = (2, 5)   # inclusive
    pins_per_net: tuple[int, int] = (1, 4)    # extra pins beside the anchor, inclusive

    def __post_init__(self):
        w = np.asarray(self.edit_type_weights, dtype=float)
        if w.shape != (3,) or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise ValueError(f"edit_type_weights must be 3 nonnegative values summing to 1, got {self.edit_type_weights}")
        if self.num_edits < 0:
            raise ValueError("num_edits must be >= 0")


@dataclass(frozen=True)
class EditRecord:
    index: int
    type: str
    node: str
    nodes_touched: tuple[str, ...]
    nets_added: tuple[str, ...]
    nets_removed: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "index": self.index, "type": self.type, "node": self.node,
            "nodes_touched": list(self.nodes_touched),
            "nets_added": list(self.nets_added), "nets_removed": list(self.nets_removed),
        }


class _Editable:
    """Name-keyed mutable view; ids are reassigned when rebuilding."""

    def __init__(self, netlist: Netlist):
        self.src = netlist
        self.nodes: dict[str, Node] = {n.name: n for n in netlist.nodes}
        self.nets: dict[str, list[tuple[str, float, float]]] = {}
        for net in netlist.nets:
            self.nets[net.name] = [
                (netlist.nodes[netlist.pins[p].node_id].name,
                 netlist.pins[p].offset_x, netlist.pins[p].offset_y)
                for p in net.pin_ids
            ]
        self.node_nets: dict[str, set[str]] = {name: set() for name in self.nodes}
        for net_name, members in self.nets.items():
            for node, _, _ in members:
                self.node_nets[node].add(net_name)
        self._serial = 0

    def fresh(self, prefix: str, taken) -> str:
        while True:
            name = f"{prefix}{self._serial}"
            self._serial += 1
            if name not in taken:
                return name

    def movable_names(self) -> list[str]:
        return [name for name, n in self.nodes.items() if n.movable]

    def neighbors(self, node: str) -> set[str]:
        return {m for net in self.node_nets[node] for m, _, _ in self.nets[net]} - {node}

    def add_net(self, members: list[str]) -> str:
        name = self.fresh("enet", self.nets)
        self.nets[name] = [(m, 0.5 * self.nodes[m].width, 0.5 * self.nodes[m].height) for m in members]
        for m in members:
            self.node_nets[m].add(name)
        return name

    def remove_node(self, node: str) -> list[str]:
        removed = []
        for net in sorted(self.node_nets.pop(node)):
            members = [t for t in self.nets[net] if t[0] != node]
            if len(members) < 2:
                del self.nets[net]
                removed.append(net)
                for m, _, _ in members:
                    self.node_nets[m].discard(net)
            else:
                self.nets[net] = members
        del self.nodes[node]
        return removed

    def build(self) -> Netlist:
        names = list(self.nodes)
        index = {name: i for i, name in enumerate(names)}
        nodes = [Node(i, n.name, n.width, n.height, n.kind, n.x, n.y)
                 for i, n in enumerate(self.nodes[name] for name in names)]
        members = [(net, [(index[m], dx, dy) for m, dx, dy in pins]) for net, pins in self.nets.items()]
        s = self.src
        return build_netlist(nodes, members, s.region, row_height=s.row_height,
                             site_width=s.site_width, name=s.name)


def _hop_search(adjacent, start, hops: int) -> set:
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        node, d = frontier.popleft()
        if d == hops:
            continue
        for m in adjacent(node):
            if m not in seen:
                seen.add(m)
                frontier.append((m, d + 1))
    seen.discard(start)
    return seen


def three_hop_neighborhood(netlist: Netlist, node_id: int) -> set[int]:
    """Nodes within 3 hops, two nodes being adjacent when they share a net."""
    if not 0 <= node_id < netlist.num_nodes:
        raise IndexError(f"node {node_id} out of range")
    node_nets, net_nodes = netlist.node_nets, netlist.net_nodes

    def adjacent(i):
        return {m for j in node_nets[i] for m in net_nodes[j]}

    return _hop_search(adjacent, node_id, 3)


def _pick_net_members(ed: _Editable, node: str, rng, cfg: EditConfig) -> list[str]:
    p = int(rng.integers(cfg.pins_per_net[0], cfg.pins_per_net[1] + 1))
    hood = sorted(_hop_search(ed.neighbors, node, 3))
    if not hood:
        # isolated node: fall back to the whole netlist
        hood = sorted(set(ed.nodes) - {node})
    if not hood:
        raise NetlistExhausted("cannot add a net: netlist has a single node")
    if len(hood) <= p:
        picked = hood
    else:
        picked = [hood[i] for i in np.sort(rng.choice(len(hood), size=p, replace=False))]
    return [node, *picked]


def _add_net(ed: _Editable, node: str, rng, cfg: EditConfig) -> tuple[str, list[str]]:
    members = _pick_net_members(ed, node, rng, cfg)
    return ed.add_net(members), members


def add_net(netlist: Netlist, node_id: int, rng, config: EditConfig | None = None) -> Netlist:
    """Return a copy with one new net joining ``node_id`` to 1..4 nearby nodes."""
    if not 0 <= node_id < netlist.num_nodes:
        raise IndexError(f"node {node_id} out of range")
    ed = _Editable(netlist)
    _add_net(ed, netlist.nodes[node_id].name, np.random.default_rng(rng), config or EditConfig())
    return ed.build()


def _random_movable(ed: _Editable, rng) -> str:
    names = ed.movable_names()
    if not names:
        raise NetlistExhausted("netlist exhausted: no movable nodes remain")
    return names[int(rng.integers(len(names)))]


def modify_netlist(netlist: Netlist, config: EditConfig) -> tuple[Netlist, list[EditRecord]]:
    """Apply ``config.num_edits`` random edits; returns the new netlist and the edit log."""
    rng = np.random.default_rng(config.rng_seed)
    ed = _Editable(netlist)
    widths = np.array([n.width for n in netlist.nodes if n.movable])
    if widths.size == 0:
        raise NetlistExhausted("netlist exhausted: no movable nodes remain")
    xl, yl, xh, yh = netlist.region
    records: list[EditRecord] = []
    for k in range(config.num_edits):
        kind = EDIT_TYPES[int(rng.choice(3, p=config.edit_type_weights))]
        if kind != "add_node" and not ed.movable_names():
            kind = "add_node"  # nothing left to pick from: grow instead
        elif kind == "add_net" and len(ed.nodes) == 1:
            kind = "add_node"  # a net needs a second node
        if kind == "add_node":
            w = float(widths[int(rng.integers(widths.size))])
            h = float(netlist.row_height)
            name = ed.fresh("enode", ed.nodes)
            ed.nodes[name] = Node(-1, name, w, h, MOVABLE, 0.5 * (xl + xh - w), 0.5 * (yl + yh - h))
            ed.node_nets[name] = set()
            n_nets = int(rng.integers(config.nets_per_node[0], config.nets_per_node[1] + 1))
            if len(ed.nodes) == 1:
                n_nets = 0  # alone in the netlist: nothing to connect to
            added, touched = [], set()
            for _ in range(n_nets):
                net, members = _add_net(ed, name, rng, config)
                added.append(net)
                touched.update(members)
            records.append(EditRecord(k, kind, name, tuple(sorted(touched - {name})), tuple(added), ()))
        elif kind == "add_net":
            name = _random_movable(ed, rng)
            net, members = _add_net(ed, name, rng, config)
            records.append(EditRecord(k, kind, name, tuple(members[1:]), (net,), ()))
        else:
            name = _random_movable(ed, rng)
            touched = sorted(ed.neighbors(name))
            removed = ed.remove_node(name)
            records.append(EditRecord(k, kind, name, tuple(touched), (), tuple(removed)))
        log.debug("edit %d: %s %s", k, kind, name)
    out = ed.build()
    problems = validate(out)
    if problems:
        raise ValidationError(problems)
    return out, records
