"""Electrostatic density model on an M x M bin grid.

Cell area is splatted onto bins by rectangle overlap (cells narrower than
``min_bins`` bins are stretched and their charge scaled down so the area is
conserved). The potential solves the Neumann Poisson problem spectrally
with an orthonormal DCT; the energy is ``0.5 * sum(q * psi)`` and its
gradient is the exact derivative of that discrete energy with respect to
each cell's position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dctn, idctn

from ..netlist import Netlist


@dataclass
class DensityGrid:
    """Snapshot of the density system for one placement.

    ``occupancy`` and ``movable`` are area fractions of each bin; fields are
    filled in lazily by :meth:`DensityModel.fields`.
    """

    occupancy: np.ndarray
    movable: np.ndarray
    fixed: np.ndarray
    potential: np.ndarray
    coeffs: np.ndarray = field(repr=False)
    bin_area: float = 1.0
    _field: tuple | None = field(default=None, repr=False)

    @property
    def shape(self):
        return self.occupancy.shape


class DensityModel:
    def __init__(self, netlist: Netlist, grid_dims, target_density: float = 1.0,
                 min_bins: float = 1.0):
        mx, my = (grid_dims, grid_dims) if np.isscalar(grid_dims) else grid_dims
        if mx < 1 or my < 1:
            raise ValueError(f"bad grid dims {grid_dims}")
        self.netlist = netlist
        self.mx, self.my = int(mx), int(my)
        self.target_density = target_density
        xl, yl, xh, yh = netlist.region
        self.xl, self.yl, self.xh, self.yh = xl, yl, xh, yh
        self.bw = (xh - xl) / self.mx
        self.bh = (yh - yl) / self.my
        self.bin_area = self.bw * self.bh

        mov = netlist.movable
        self.mov_idx = np.flatnonzero(mov)
        w = netlist.node_w[mov]
        h = netlist.node_h[mov]
        self.w, self.h = w, h
        self.sw = np.minimum(np.maximum(w, min_bins * self.bw), xh - xl)
        self.sh = np.minimum(np.maximum(h, min_bins * self.bh), yh - yl)
        self.ratio = (w * h) / (self.sw * self.sh)
        self.kx = int(np.ceil(self.sw.max() / self.bw)) + 1 if len(w) else 1
        self.ky = int(np.ceil(self.sh.max() / self.bh)) + 1 if len(w) else 1
        self.total_movable_area = float(np.sum(w * h))

        self.fixed_area = self._fixed_map()
        self.capacity = np.maximum(self.bin_area - self.fixed_area, 0.0)

        wu = np.pi * np.arange(self.mx) / (xh - xl)
        wv = np.pi * np.arange(self.my) / (yh - yl)
        self.wu, self.wv = wu, wv
        denom = wu[:, None] ** 2 + wv[None, :] ** 2
        denom[0, 0] = 1.0
        self.inv_lap = 1.0 / denom
        self.inv_lap[0, 0] = 0.0
        self._bases = None

    # ---- binning -----------------------------------------------------------

    def _fixed_map(self) -> np.ndarray:
        nl = self.netlist
        q = np.zeros((self.mx, self.my))
        for i in np.flatnonzero(nl.blocks_density):
            x0, x1 = max(nl.ref_x[i], self.xl), min(nl.ref_x[i] + nl.node_w[i], self.xh)
            y0, y1 = max(nl.ref_y[i], self.yl), min(nl.ref_y[i] + nl.node_h[i], self.yh)
            if x1 <= x0 or y1 <= y0:
                continue
            ex = self.xl + self.bw * np.arange(self.mx + 1)
            ey = self.yl + self.bh * np.arange(self.my + 1)
            ox = np.clip(np.minimum(x1, ex[1:]) - np.maximum(x0, ex[:-1]), 0, None)
            oy = np.clip(np.minimum(y1, ey[1:]) - np.maximum(y0, ey[:-1]), 0, None)
            q += np.outer(ox, oy)
        return q

    def _axis(self, c, s, lo_edge, pitch, nbins, k):
        """Bin indices, overlaps and d(overlap)/dc along one axis for centers ``c``."""
        half = 0.5 * s
        lim_lo = lo_edge + half
        lim_hi = lo_edge + nbins * pitch - half
        cc = np.clip(c, lim_lo, lim_hi)
        free = (c > lim_lo) & (c < lim_hi)
        lo = cc - half
        hi = cc + half
        b0 = np.floor((lo - lo_edge) / pitch).astype(np.int64)
        b0 = np.clip(b0, 0, nbins - 1)
        b = b0[:, None] + np.arange(k)[None, :]
        valid = b < nbins
        b_lo = lo_edge + b * pitch
        b_hi = b_lo + pitch
        ov = np.minimum(hi[:, None], b_hi) - np.maximum(lo[:, None], b_lo)
        pos = valid & (ov > 0)
        ov = np.where(pos, ov, 0.0)
        d = (hi[:, None] < b_hi).astype(float) - (lo[:, None] > b_lo).astype(float)
        d = np.where(pos & free[:, None], d, 0.0)
        return np.minimum(b, nbins - 1), ov, d

    def _splat(self, x, y):
        i = self.mov_idx
        if len(i) == 0:
            return np.zeros((self.mx, self.my)), None
        cx = x[i] + 0.5 * self.w
        cy = y[i] + 0.5 * self.h
        bx, ox, dx = self._axis(cx, self.sw, self.xl, self.bw, self.mx, self.kx)
        by, oy, dy = self._axis(cy, self.sh, self.yl, self.bh, self.my, self.ky)
        flat = (bx[:, :, None] * self.my + by[:, None, :]).reshape(len(i), -1)
        wts = (self.ratio[:, None, None] * ox[:, :, None] * oy[:, None, :]).reshape(len(i), -1)
        q = np.bincount(flat.ravel(), weights=wts.ravel(), minlength=self.mx * self.my)
        return q.reshape(self.mx, self.my), (flat, ox, dx, oy, dy)

    # ---- energy ------------------------------------------------------------

    def solve(self, q_total: np.ndarray):
        rho = q_total / self.bin_area
        coeffs = dctn(rho, type=2, norm="ortho") * self.inv_lap
        psi = idctn(coeffs, type=2, norm="ortho")
        return psi, coeffs

    def evaluate(self, x, y, need_grad: bool = True):
        """Return (energy, grad_x, grad_y, DensityGrid) at node coordinates ``x, y``."""
        q_mov, parts = self._splat(x, y)
        q = q_mov + self.fixed_area
        psi, coeffs = self.solve(q)
        energy = 0.5 * float(np.sum(q * psi))
        grid = DensityGrid(
            occupancy=q / self.bin_area, movable=q_mov / self.bin_area,
            fixed=self.fixed_area / self.bin_area, potential=psi, coeffs=coeffs,
            bin_area=self.bin_area,
        )
        n = self.netlist.num_nodes
        gx = np.zeros(n)
        gy = np.zeros(n)
        if need_grad and len(self.mov_idx):
            flat, ox, dx, oy, dy = parts
            p = psi.ravel()[flat].reshape(len(self.mov_idx), self.kx, self.ky)
            gx[self.mov_idx] = self.ratio * np.einsum("nij,ni,nj->n", p, dx, oy)
            gy[self.mov_idx] = self.ratio * np.einsum("nij,ni,nj->n", p, ox, dy)
        return energy, gx, gy, grid

    def overflow(self, grid: DensityGrid) -> float:
        if self.total_movable_area <= 0:
            return 0.0
        excess = np.maximum(grid.movable * self.bin_area - self.target_density * self.capacity, 0.0)
        return float(np.sum(excess) / self.total_movable_area)

    # ---- spectral field ----------------------------------------------------

    def _basis(self):
        if self._bases is None:
            def axis(nb, omega):
                n = np.arange(nb)
                scale = np.full(nb, np.sqrt(2.0 / nb))
                scale[0] = np.sqrt(1.0 / nb)
                ang = np.pi * np.outer(2 * n + 1, np.arange(nb)) / (2 * nb)
                return np.cos(ang) * scale, np.sin(ang) * scale * omega
            self._bases = axis(self.mx, self.wu), axis(self.my, self.wv)
        return self._bases

    def fields(self, grid: DensityGrid):
        """Electric field (-grad psi) at bin centers by spectral differentiation."""
        if grid._field is None:
            (cx, sx), (cy, sy) = self._basis()
            c = grid.coeffs
            grid._field = (sx @ c @ cy.T, cx @ c @ sy.T)
        return grid._field

    def potential_from_basis(self, grid: DensityGrid) -> np.ndarray:
        (cx, _), (cy, _) = self._basis()
        return cx @ grid.coeffs @ cy.T


def density_cost_and_grad(netlist: Netlist, placement, grid_dims, target_density: float = 1.0):
    model = DensityModel(netlist, grid_dims, target_density)
    return model.evaluate(np.asarray(placement.x), np.asarray(placement.y))


def overflow(density_grid: DensityGrid, target_density: float, capacity=None,
             total_movable_area: float | None = None) -> float:
    """Area-weighted overflow of the movable occupancy over ``target * capacity``.

    ``capacity`` defaults to the free area of each bin (bin area minus fixed
    blockage), expressed as a fraction of the bin.
    """
    cap = 1.0 - density_grid.fixed if capacity is None else capacity
    cap = np.maximum(cap, 0.0)
    mov = density_grid.movable
    total = float(np.sum(mov)) if total_movable_area is None else total_movable_area / density_grid.bin_area
    if total <= 0:
        return 0.0
    return float(np.sum(np.maximum(mov - target_density * cap, 0.0)) / total)
