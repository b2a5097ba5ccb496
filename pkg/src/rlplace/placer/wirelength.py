"""Weighted-average (WA) smooth wirelength and its analytic gradient."""

from __future__ import annotations

import numpy as np

from ..netlist import Netlist, pin_positions


def _wa_axis(p: np.ndarray, starts: np.ndarray, seg: np.ndarray, gamma: float):
    """WA span of each net along one axis and d(span)/d(pin)."""
    pmax = np.maximum.reduceat(p, starts)
    pmin = np.minimum.reduceat(p, starts)
    ep = np.exp((p - pmax[seg]) / gamma)
    em = np.exp((pmin[seg] - p) / gamma)
    sp = np.add.reduceat(ep, starts)
    sm = np.add.reduceat(em, starts)
    wa_max = np.add.reduceat(p * ep, starts) / sp
    wa_min = np.add.reduceat(p * em, starts) / sm
    grad = (ep / sp[seg]) * (1.0 + (p - wa_max[seg]) / gamma) - (em / sm[seg]) * (
        1.0 - (p - wa_min[seg]) / gamma
    )
    return wa_max - wa_min, grad


def wa_wirelength(netlist: Netlist, x: np.ndarray, y: np.ndarray, gamma: float,
                  per_net: bool = False):
    """Return (cost, grad_x, grad_y) for node lower-left coordinates ``x, y``.

    Gradients of fixed nodes are zeroed. With ``per_net`` the cost is the
    per-net array instead of its sum.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    n = netlist.num_nodes
    if netlist.num_nets == 0:
        z = np.zeros(n)
        return (np.zeros(0) if per_net else 0.0), z, z.copy()
    starts = netlist.net_start[:-1]
    seg = netlist.pin_net
    px, py = pin_positions(netlist, x, y)
    wx, gpx = _wa_axis(px, starts, seg, gamma)
    wy, gpy = _wa_axis(py, starts, seg, gamma)
    gx = np.bincount(netlist.pin_node, weights=gpx, minlength=n)
    gy = np.bincount(netlist.pin_node, weights=gpy, minlength=n)
    gx[~netlist.movable] = 0.0
    gy[~netlist.movable] = 0.0
    cost = wx + wy
    return (cost if per_net else float(np.sum(cost))), gx, gy


def wl_cost_and_grad(netlist: Netlist, placement, gamma: float):
    return wa_wirelength(netlist, np.asarray(placement.x), np.asarray(placement.y), gamma)


def wa_error_bound(degree: np.ndarray, gamma: float) -> np.ndarray:
    """Upper bound on HPWL - WA per net: each of the 4 extrema is off by at
    most (n - 1) * gamma / e, since t * exp(-t / gamma) <= gamma / e."""
    return 4.0 * (np.asarray(degree) - 1) * gamma / np.e
