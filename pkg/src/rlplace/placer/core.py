"""Global placement loop: WA wirelength + electrostatic density, Nesterov
descent and the multiplicative density-weight schedule with agent hooks."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..config import from_dict as config_from_dict
from ..netlist import Netlist, Placement, hpwl as exact_hpwl
from .control import SpatialAction, apply_spatial_scaling, heuristic_cof, lambda_init
from .density import DensityGrid, DensityModel
from .nesterov import Nesterov
from .wirelength import wa_wirelength

RL_MODES = ("off", "density_weight", "spatial_cost")
STATS_COLUMNS = ("iteration", "hpwl", "overflow", "lambda", "cof", "wall_ms")


@dataclass
class PlacerConfig:
    grid_dims: int = 128
    target_density: float = 1.0
    target_overflow: float = 0.1
    max_iterations: int = 1000
    wl_smooth_gamma: float | None = None  # None: one bin width
    cof_min: float = 0.95
    cof_max: float = 1.05
    delta_hpwl_ref: float = 3.5e5
    lambda_init_scale: float = 1.0
    rl_mode: str = "off"
    init_jitter: float = 0.01
    stretch_bins: float = 1.0
    hpwl_blowup: float = 10.0
    overflow_patience: int = 200
    max_backtracks: int = 10

    def __post_init__(self):
        m = int(self.grid_dims)
        if m < 1 or m & (m - 1):
            raise ValueError(f"grid_dims must be a power of two, got {self.grid_dims}")
        if not 0 < self.target_overflow < 1:
            raise ValueError(f"target_overflow must be in (0, 1), got {self.target_overflow}")
        if not self.cof_min <= 1 <= self.cof_max:
            raise ValueError("need cof_min <= 1 <= cof_max")
        if self.rl_mode not in RL_MODES:
            raise ValueError(f"rl_mode must be one of {RL_MODES}, got {self.rl_mode!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "PlacerConfig":
        return config_from_dict(cls, d)


@dataclass
class PlacerState:
    iteration: int = 0
    lam: float = 1.0
    cof: float = 1.0
    hpwl_history: list = field(default_factory=list)
    overflow: float = 1.0
    diverged: bool = False
    converged: bool = False
    reason: str = ""

    @property
    def hpwl(self) -> float:
        return self.hpwl_history[-1]

    @property
    def delta_hpwl(self) -> float:
        h = self.hpwl_history
        return h[-1] - h[-2] if len(h) > 1 else 0.0


def init_placement(netlist: Netlist, rng, jitter: float = 0.01, placement: Placement | None = None) -> Placement:
    """Movable cells centered in the region with uniform jitter of
    ``jitter`` x region size; fixed nodes keep their reference location."""
    rng = np.random.default_rng(rng)
    ref = placement or Placement.reference(netlist)
    x = np.array(ref.x, dtype=float)
    y = np.array(ref.y, dtype=float)
    mov = netlist.movable
    n = int(mov.sum())
    xl, yl, xh, yh = netlist.region
    jx = rng.uniform(-jitter, jitter, size=n) * (xh - xl)
    jy = rng.uniform(-jitter, jitter, size=n) * (yh - yl)
    x[mov] = 0.5 * (xl + xh) + jx - 0.5 * netlist.node_w[mov]
    y[mov] = 0.5 * (yl + yh) + jy - 0.5 * netlist.node_h[mov]
    return Placement(x, y)


class HeuristicController:
    """Reproduces the built-in schedule through the controller hook."""

    def cof(self, state: PlacerState, p: float, config: PlacerConfig) -> float:
        return heuristic_cof(p, config.cof_min, config.cof_max)

    def spatial_action(self, state: PlacerState):
        return None


class Placer:
    """Resumable placement run; the environment drives it block by block."""

    def __init__(self, netlist: Netlist, config: PlacerConfig, seed=0,
                 placement: Placement | None = None, baseline_max_hpwl: float | None = None):
        self.netlist = netlist
        self.config = config
        self.baseline_max_hpwl = baseline_max_hpwl
        self.model = DensityModel(netlist, config.grid_dims, config.target_density,
                                  config.stretch_bins)
        self.bin_size = min(self.model.bw, self.model.bh)
        self.gamma_base = config.wl_smooth_gamma or self.bin_size
        start = init_placement(netlist, seed, config.init_jitter, placement)
        n = netlist.num_nodes
        mov = netlist.movable
        xl, yl, xh, yh = netlist.region
        lo_x = np.where(mov, xl, start.x)
        hi_x = np.where(mov, xh - netlist.node_w, start.x)
        lo_y = np.where(mov, yl, start.y)
        hi_y = np.where(mov, yh - netlist.node_h, start.y)
        self._n = n
        self._lo = np.concatenate([lo_x, lo_y])
        self._hi = np.concatenate([np.maximum(hi_x, lo_x), np.maximum(hi_y, lo_y)])
        z0 = np.clip(np.concatenate([start.x, start.y]), self._lo, self._hi)
        self.initial = Placement(z0[:n], z0[n:])

        self.state = PlacerState()
        self.stats: list[dict] = []
        self._overflow_rising = 0

        x, y = z0[:n], z0[n:]
        self.state.hpwl_history.append(exact_hpwl(netlist, self.initial))
        gamma = self.gamma_base * 4.0
        _, wgx, wgy = wa_wirelength(netlist, x, y, gamma)
        _, dgx, dgy, grid = self.model.evaluate(x, y)
        self.grid: DensityGrid = grid
        self.state.overflow = self.model.overflow(grid)
        if config.max_iterations > 0 or mov.any():
            try:
                self.state.lam = config.lambda_init_scale * lambda_init(
                    np.concatenate([wgx, wgy]), np.concatenate([dgx, dgy]))
            except ValueError:
                self.state.lam = 1.0
        alpha0 = self._initial_step(z0)
        self.opt = Nesterov(z0, self._lo, self._hi, alpha0, config.max_backtracks)
        if self.state.overflow <= config.target_overflow:
            self.state.converged = True
            self.state.reason = "converged"

    # ---- objective -----------------------------------------------------------

    def gamma(self) -> float:
        c = self.config
        t = np.clip((self.state.overflow - c.target_overflow) / (1.0 - c.target_overflow), 0.0, 1.0)
        return self.gamma_base * 4.0 ** float(t)

    def _cost_grad(self, z, gamma, lam):
        n = self._n
        x, y = z[:n], z[n:]
        wl, wgx, wgy = wa_wirelength(self.netlist, x, y, gamma)
        d, dgx, dgy, grid = self.model.evaluate(x, y)
        return wl + lam * d, np.concatenate([wgx + lam * dgx, wgy + lam * dgy]), grid

    def _cost(self, z, gamma, lam):
        n = self._n
        x, y = z[:n], z[n:]
        wl, _, _ = wa_wirelength(self.netlist, x, y, gamma)
        d, _, _, grid = self.model.evaluate(x, y, need_grad=False)
        return wl + lam * d, grid

    def _initial_step(self, z0) -> float:
        gamma, lam = self.gamma(), self.state.lam
        _, g0, _ = self._cost_grad(z0, gamma, lam)
        gmax = np.max(np.abs(g0))
        if not np.isfinite(gmax) or gmax == 0:
            return self.bin_size
        z1 = np.clip(z0 - 0.1 * self.bin_size * g0 / gmax, self._lo, self._hi)
        _, g1, _ = self._cost_grad(z1, gamma, lam)
        dg = np.linalg.norm(g1 - g0)
        return float(np.linalg.norm(z1 - z0) / dg) if dg > 0 else self.bin_size

    # ---- iteration -----------------------------------------------------------

    @property
    def done(self) -> bool:
        s = self.state
        return s.converged or s.diverged or s.iteration >= self.config.max_iterations

    @property
    def placement(self) -> Placement:
        n = self._n
        return Placement(self.opt.u[:n], self.opt.u[n:])

    def cell_centers(self, z):
        n = self._n
        xl, yl = self.netlist.region[:2]
        return z[:n] + 0.5 * self.netlist.node_w - xl, z[n:] + 0.5 * self.netlist.node_h - yl

    def iterate(self, cof_fn=None, action: SpatialAction | None = None) -> dict:
        """One optimizer step followed by the density-weight update.

        ``cof_fn(state, p)`` overrides the heuristic cof; ``action`` rescales
        the objective gradient per region.
        """
        if self.done:
            raise RuntimeError("placement already finished")
        t0 = time.perf_counter()
        cfg, st = self.config, self.state
        gamma, lam = self.gamma(), st.lam
        f_v, g, _ = self._cost_grad(self.opt.v, gamma, lam)
        if not (np.isfinite(f_v) and np.all(np.isfinite(g))):
            return self._diverge("non-finite objective or gradient", t0)
        d = g
        if action is not None:
            cx, cy = self.cell_centers(self.opt.v)
            dx, dy = apply_spatial_scaling(g[: self._n], g[self._n:], cx, cy, action)
            d = np.concatenate([dx, dy])
        grid = self.opt.step(f_v, g, d, lambda z: self._cost(z, gamma, lam))
        self.grid = grid
        h = exact_hpwl(self.netlist, self.placement)
        prev_ovf = st.overflow
        st.overflow = self.model.overflow(grid)
        st.hpwl_history.append(h)
        st.iteration += 1

        p = (st.hpwl_history[-1] - st.hpwl_history[-2]) / cfg.delta_hpwl_ref
        cof = cof_fn(st, p) if cof_fn is not None else heuristic_cof(p, cfg.cof_min, cfg.cof_max)
        row = {
            "iteration": st.iteration - 1, "hpwl": h, "overflow": st.overflow,
            "lambda": lam, "cof": float(cof),
        }
        st.lam = lam * cof
        st.cof = float(cof)

        self._overflow_rising = self._overflow_rising + 1 if st.overflow > prev_ovf else 0
        if not np.isfinite(h):
            st.diverged, st.reason = True, "non-finite HPWL"
        elif self.baseline_max_hpwl and h > cfg.hpwl_blowup * self.baseline_max_hpwl:
            st.diverged, st.reason = True, "HPWL blow-up"
        elif self._overflow_rising >= cfg.overflow_patience:
            st.diverged, st.reason = True, "overflow rising"
        elif st.overflow <= cfg.target_overflow:
            st.converged, st.reason = True, "converged"
        elif st.iteration >= cfg.max_iterations:
            st.reason = "max_iterations"
        row["wall_ms"] = 1e3 * (time.perf_counter() - t0)
        self.stats.append(row)
        return row

    def _diverge(self, reason, t0):
        st = self.state
        st.diverged, st.reason = True, reason
        st.iteration += 1
        st.hpwl_history.append(float("nan"))
        row = {"iteration": st.iteration - 1, "hpwl": float("nan"), "overflow": st.overflow,
               "lambda": st.lam, "cof": st.cof, "wall_ms": 1e3 * (time.perf_counter() - t0)}
        self.stats.append(row)
        return row

    def run(self, controller=None, max_steps: int | None = None):
        """Iterate until done (or ``max_steps`` more iterations)."""
        cfg = self.config
        cof_fn = None
        if controller is not None and cfg.rl_mode == "density_weight":
            def cof_fn(state, p):
                return controller.cof(state, p, cfg)
        k = 0
        while not self.done and (max_steps is None or k < max_steps):
            action = None
            if controller is not None and cfg.rl_mode == "spatial_cost":
                action = controller.spatial_action(self.state)
            self.iterate(cof_fn, action)
            k += 1
        return self


def run_placement(netlist: Netlist, config: PlacerConfig, controller=None, seed=0,
                  placement: Placement | None = None, baseline_max_hpwl: float | None = None):
    """Run to convergence, divergence or ``max_iterations``.

    Returns (final placement, PlacerState, per-iteration stats rows).
    """
    placer = Placer(netlist, config, seed, placement, baseline_max_hpwl)
    placer.run(controller)
    return placer.placement, placer.state, placer.stats
