"""Placement as an episodic control problem.

An episode is one placement run. Every ``iterations_per_step`` placer
iterations the agent sees an ``H x W x 11`` feature grid and picks either the
density-weight multiplier for the next block or a grid of per-region
gradient weights. Only the terminal step is rewarded: percent HPWL
improvement over the uncontrolled baseline, or a fixed penalty when the run
fails to converge.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .agent import COF_HI, COF_LO
from .netlist import Netlist, Placement, hpwl as exact_hpwl, net_bboxes
from .placer import Placer, PlacerConfig, PlacerState, SpatialAction, W_HI
from .placer.density import DensityGrid

log = logging.getLogger(__name__)

SCALAR_CHANNELS = ("log_hpwl", "log_delta_hpwl", "log_lambda", "overflow", "cof")
MAP_CHANNELS = ("cell_density", "wire_density")


def channel_names(levels=(2, 4, 8, 16)) -> tuple[str, ...]:
    return SCALAR_CHANNELS + MAP_CHANNELS + tuple(f"local_hpwl_{k}" for k in levels)


CHANNELS = channel_names()


class BaselineError(RuntimeError):
    """The uncontrolled run did not converge, so the design cannot be used."""


@dataclass(frozen=True)
class EnvConfig:
    state_dims: int = 32
    iterations_per_step: int = 10
    local_hpwl_levels: tuple[int, ...] = (2, 4, 8, 16)
    action_space: str = "density"
    action_dims: int = 32
    divergence_reward: float = -10.0

    def __post_init__(self):
        h = self.state_dims
        for k in self.local_hpwl_levels:
            if k < 1 or h % k:
                raise ValueError(f"local HPWL level {k} must divide state_dims {h}")
        if self.action_space not in ("density", "spatial"):
            raise ValueError(f"unknown action space {self.action_space!r}")

    @property
    def channels(self) -> tuple[str, ...]:
        return channel_names(self.local_hpwl_levels)

    @property
    def rl_mode(self) -> str:
        return "density_weight" if self.action_space == "density" else "spatial_cost"


# --------------------------------------------------------------------------
# feature extraction
# --------------------------------------------------------------------------


def signed_log1p(v):
    return np.sign(v) * np.log1p(np.abs(v))


def resample_map(m: np.ndarray, h: int) -> np.ndarray:
    """Block-average or replicate a region-aligned map to ``h x h``."""
    out = np.asarray(m, dtype=float)
    for axis in (0, 1):
        n = out.shape[axis]
        if n > h:
            if n % h:
                raise ValueError(f"cannot resample {m.shape} to {h}")
            shp = list(out.shape)
            shp[axis:axis + 1] = [h, n // h]
            out = out.reshape(shp).mean(axis=axis + 1)
        elif n < h:
            if h % n:
                raise ValueError(f"cannot resample {m.shape} to {h}")
            out = np.repeat(out, h // n, axis=axis)
    return out


def _axis_overlap(lo, hi, edges):
    """Fraction of each interval [lo, hi] lying in each bin; degenerate
    intervals count fully in the bin that holds them."""
    n = len(edges) - 1
    span = hi - lo
    ov = np.clip(np.minimum(hi[:, None], edges[None, 1:]) - np.maximum(lo[:, None], edges[None, :-1]), 0, None)
    frac = np.divide(ov, span[:, None], out=np.zeros_like(ov), where=span[:, None] > 0)
    point = span <= 0
    if point.any():
        idx = np.clip(np.searchsorted(edges, lo[point], side="right") - 1, 0, n - 1)
        frac[point] = 0.0
        frac[np.flatnonzero(point), idx] = 1.0
    return frac


def wire_density_map(netlist: Netlist, placement: Placement, h: int) -> np.ndarray:
    """Per-bin sum over nets of the share of the net's bounding box in the bin."""
    if netlist.num_nets == 0:
        return np.zeros((h, h))
    xmin, xmax, ymin, ymax = net_bboxes(netlist, placement.x, placement.y)
    xl, yl, xh, yh = netlist.region
    fx = _axis_overlap(xmin, xmax, np.linspace(xl, xh, h + 1))
    fy = _axis_overlap(ymin, ymax, np.linspace(yl, yh, h + 1))
    return fx.T @ fy


def local_hpwl_map(netlist: Netlist, placement: Placement, k: int) -> np.ndarray:
    """``k x k`` map: each net's HPWL lands in the partition holding its bbox center."""
    out = np.zeros((k, k))
    if netlist.num_nets == 0:
        return out
    xmin, xmax, ymin, ymax = net_bboxes(netlist, placement.x, placement.y)
    xl, yl, xh, yh = netlist.region
    ix = np.clip(np.floor((0.5 * (xmin + xmax) - xl) / (xh - xl) * k).astype(int), 0, k - 1)
    iy = np.clip(np.floor((0.5 * (ymin + ymax) - yl) / (yh - yl) * k).astype(int), 0, k - 1)
    np.add.at(out, (ix, iy), (xmax - xmin) + (ymax - ymin))
    return out


def extract_features(state: PlacerState, grid: DensityGrid, netlist: Netlist, placement: Placement,
                     state_dims: int = 32, levels=(2, 4, 8, 16)) -> np.ndarray:
    """Raw ``(H, W, C)`` features; map axis 0 is x, axis 1 is y."""
    h = state_dims
    scalars = (
        math.log(max(state.hpwl, 1e-12)),
        float(signed_log1p(state.delta_hpwl)),
        math.log(state.lam),
        state.overflow,
        state.cof,
    )
    out = np.empty((h, h, len(SCALAR_CHANNELS) + 2 + len(levels)))
    for c, v in enumerate(scalars):
        out[:, :, c] = v
    c = len(scalars)
    out[:, :, c] = resample_map(grid.occupancy, h)
    out[:, :, c + 1] = wire_density_map(netlist, placement, h)
    for j, k in enumerate(levels):
        out[:, :, c + 2 + j] = resample_map(local_hpwl_map(netlist, placement, k), h)
    return out


# --------------------------------------------------------------------------
# normalization statistics
# --------------------------------------------------------------------------


@dataclass
class FeatureStats:
    channels: tuple[str, ...]
    p10: np.ndarray
    p90: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    baseline_hpwl: float = float("nan")
    baseline_max_hpwl: float = float("nan")
    baseline_iterations: int = 0
    design: str = ""

    @classmethod
    def from_stream(cls, stream, channels, **meta) -> "FeatureStats":
        """Percentiles of all values of each channel; mean and variance of the
        values after clipping to those percentiles."""
        data = np.stack([np.asarray(s) for s in stream]).reshape(-1, len(channels))
        p10 = np.percentile(data, 10, axis=0)
        p90 = np.percentile(data, 90, axis=0)
        clipped = np.clip(data, p10, p90)
        return cls(tuple(channels), p10, p90, clipped.mean(axis=0), clipped.var(axis=0), **meta)

    def to_json(self) -> dict:
        return {
            "design": self.design,
            "baseline_hpwl": self.baseline_hpwl,
            "baseline_max_hpwl": self.baseline_max_hpwl,
            "baseline_iterations": self.baseline_iterations,
            "channels": {
                name: {"p10": float(self.p10[i]), "p90": float(self.p90[i]),
                       "mean": float(self.mean[i]), "var": float(self.var[i])}
                for i, name in enumerate(self.channels)
            },
        }

    @classmethod
    def from_json(cls, d: dict) -> "FeatureStats":
        names = tuple(d["channels"])
        col = {k: np.array([d["channels"][n][k] for n in names]) for k in ("p10", "p90", "mean", "var")}
        return cls(names, col["p10"], col["p90"], col["mean"], col["var"],
                   float(d["baseline_hpwl"]), float(d["baseline_max_hpwl"]),
                   int(d["baseline_iterations"]), d.get("design", ""))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureStats":
        return cls.from_json(json.loads(Path(path).read_text()))


def normalize(raw: np.ndarray, stats: FeatureStats) -> np.ndarray:
    """Clip each channel to [p10, p90] and standardize; zero-variance channels become 0."""
    std = np.sqrt(stats.var)
    safe = np.where(std > 0, std, 1.0)
    out = (np.clip(raw, stats.p10, stats.p90) - stats.mean) / safe
    return np.where(std > 0, out, 0.0)


# --------------------------------------------------------------------------
# baseline
# --------------------------------------------------------------------------


@dataclass
class BaselineResult:
    baseline_hpwl: float
    stats: FeatureStats
    stream: list
    placement: Placement
    state: PlacerState
    rows: list


def _block_features(placer: Placer, cfg: EnvConfig) -> np.ndarray:
    return extract_features(placer.state, placer.grid, placer.netlist, placer.placement,
                            cfg.state_dims, cfg.local_hpwl_levels)


def run_baseline(netlist: Netlist, placer_config: PlacerConfig, env_config: EnvConfig | None = None,
                 seed: int = 0, design: str = "") -> BaselineResult:
    """Uncontrolled run; features are sampled at every agent decision point."""
    cfg = env_config or EnvConfig()
    pc = _with_mode(placer_config, "off")
    placer = Placer(netlist, pc, seed)
    stream = [_block_features(placer, cfg)]
    while not placer.done:
        placer.run(max_steps=cfg.iterations_per_step)
        stream.append(_block_features(placer, cfg))
    st = placer.state
    if not st.converged:
        raise BaselineError(
            f"baseline for {design or netlist.name!r} did not converge ({st.reason or 'max_iterations'}) "
            f"after {st.iteration} iterations, overflow {st.overflow:.4f}")
    final = exact_hpwl(netlist, placer.placement)
    stats = FeatureStats.from_stream(
        stream, cfg.channels, baseline_hpwl=final,
        baseline_max_hpwl=float(np.nanmax(st.hpwl_history)), baseline_iterations=st.iteration,
        design=design or netlist.name)
    return BaselineResult(final, stats, stream, placer.placement, st, placer.stats)


def _with_mode(pc: PlacerConfig, mode: str) -> PlacerConfig:
    return replace(pc, rl_mode=mode)


# --------------------------------------------------------------------------
# environment
# --------------------------------------------------------------------------


@dataclass
class EpisodeResult:
    final_hpwl: float
    baseline_hpwl: float
    reward: float
    steps: int
    diverged: bool
    iterations: int = 0
    reason: str = ""


@dataclass
class Design:
    name: str
    netlist: Netlist
    placer_config: PlacerConfig
    stats: FeatureStats
    seed: int = 0


@dataclass
class EnvTiming:
    placer_s: float = 0.0
    features_s: float = 0.0
    policy_s: float = 0.0


class PlacementEnv:
    """Holds registered designs; one episode is active at a time."""

    def __init__(self, env_config: EnvConfig | None = None):
        self.config = env_config or EnvConfig()
        self.designs: dict[str, Design] = {}
        self.placer: Placer | None = None
        self.design: Design | None = None
        self.steps = 0
        self.result: EpisodeResult | None = None
        self.clamp_events = 0
        self.timing = EnvTiming()
        self.last_raw: np.ndarray | None = None

    def register(self, name: str, netlist: Netlist, placer_config: PlacerConfig,
                 stats: FeatureStats, seed: int = 0) -> Design:
        if tuple(stats.channels) != self.config.channels:
            raise ValueError("feature stats channels do not match the environment")
        d = Design(name, netlist, _with_mode(placer_config, self.config.rl_mode), stats, seed)
        self.designs[name] = d
        return d

    @property
    def done(self) -> bool:
        return self.placer is None or self.placer.done

    def reset(self, design: str | None = None) -> np.ndarray:
        if design is None:
            if len(self.designs) != 1:
                raise KeyError("design name required when several designs are registered")
            design = next(iter(self.designs))
        if design not in self.designs:
            raise KeyError(f"no baseline statistics registered for design {design!r}")
        d = self.design = self.designs[design]
        t0 = time.perf_counter()
        self.placer = Placer(d.netlist, d.placer_config, d.seed,
                             baseline_max_hpwl=d.stats.baseline_max_hpwl)
        self.timing.placer_s += time.perf_counter() - t0
        self.steps = 0
        self.result = None
        if self.placer.done:
            self._finish()
        return self._observe()

    def _observe(self) -> np.ndarray:
        t0 = time.perf_counter()
        raw = _block_features(self.placer, self.config)
        self.last_raw = raw
        out = normalize(raw, self.design.stats)
        self.timing.features_s += time.perf_counter() - t0
        return out

    def _admit(self, action):
        """Turn an action into placer hooks, clamping into the admissible range."""
        if action is None:
            return None, None
        if self.config.action_space == "density":
            cof = float(getattr(action, "cof_override", action))
            c = min(max(cof, COF_LO), COF_HI) if math.isfinite(cof) else 1.0
            if c != cof:
                self.clamp_events += 1
                log.warning("cof %r outside [%g, %g]; clamped to %g", cof, COF_LO, COF_HI, c)
            return (lambda state, p: c), None
        if isinstance(action, SpatialAction):
            grid = action.grid
        else:
            grid = np.asarray(getattr(action, "spatial", action), dtype=float)
        a = self.config.action_dims
        if grid.shape != (a, a):
            raise ValueError(f"spatial action must be {a}x{a}, got {grid.shape}")
        g = np.clip(np.nan_to_num(grid, nan=1.0, posinf=W_HI), 0.0, W_HI)
        if not np.array_equal(g, grid):
            self.clamp_events += 1
            log.warning("spatial action outside [0, %g]; clamped", W_HI)
        nl = self.design.netlist
        return None, SpatialAction.for_region(g, nl.width, nl.height)

    def step(self, action=None) -> tuple[np.ndarray, float, bool]:
        """Run one block of placer iterations under ``action`` (None: heuristic)."""
        if self.placer is None or self.placer.done:
            raise RuntimeError("episode is not active; call reset()")
        cof_fn, spatial = self._admit(action)
        t0 = time.perf_counter()
        for _ in range(self.config.iterations_per_step):
            if self.placer.done:
                break
            self.placer.iterate(cof_fn, spatial)
        self.timing.placer_s += time.perf_counter() - t0
        self.steps += 1
        reward = 0.0
        if self.placer.done:
            reward = self._finish().reward
        return self._observe(), reward, self.placer.done

    def _finish(self) -> EpisodeResult:
        st, d = self.placer.state, self.design
        base = d.stats.baseline_hpwl
        final = exact_hpwl(d.netlist, self.placer.placement) if not st.diverged else float("nan")
        if st.converged:
            reward = terminal_reward(final, base)
        else:
            reward = self.config.divergence_reward
        self.result = EpisodeResult(final, base, reward, self.steps, not st.converged,
                                    st.iteration, st.reason or "max_iterations")
        return self.result


def terminal_reward(final_hpwl: float, baseline_hpwl: float) -> float:
    return 100.0 * (baseline_hpwl - final_hpwl) / baseline_hpwl

