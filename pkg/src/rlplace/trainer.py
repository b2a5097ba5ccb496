"""Advantage actor-critic training.

Workers roll out whole episodes with correlated exploration noise and push
them onto a bounded queue. A single learner takes batches of trajectories,
recomputes values under the current parameters, forms n-step targets,
applies one clipped RMSProp update and publishes a fresh parameter snapshot.
With one worker in synchronous mode every run is reproducible.
"""

from __future__ import annotations

import csv
import logging
import math
import queue
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .agent import (
    PolicyValueNet, log_prob_grads, policy_value_forward, sample_action, sigmoid,
    softplus,
)
from .env import EpisodeResult
from .netlist import Placement, write_placement
from .nn import RMSProp, clip_grad_norm, global_grad_norm, optimizer_step, save_checkpoint
from .noise import NoiseFieldPlan, exploration_field

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainerConfig:
    lr_density: float = 4e-5
    lr_spatial: float = 4e-6
    beta: float = 0.05
    n_step: int = 80
    batch_size_trajectories: int = 4
    gamma: float = 1.0
    max_train_steps: int = 50_000
    max_episodes: int | None = None
    num_workers: int = 1
    synchronous: bool = True
    value_loss_weight: float = 0.5
    grad_clip: float = 8.0
    lr_decay: bool = True  # linear decay to 0 over max_train_steps
    rmsprop_alpha: float = 0.99
    rmsprop_eps: float = 0.01
    noise_theta: float = 0.15
    noise_sigma: float = 0.3
    noise_resolutions: tuple[int, ...] | None = None  # None: powers of two below the action grid
    max_consecutive_divergence: int = 200
    learner_chunk: int = 128
    checkpoint_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.n_step < 1:
            raise ValueError("n_step must be >= 1")
        if self.batch_size_trajectories < 1:
            raise ValueError("batch_size_trajectories must be >= 1")
        if self.num_workers < 1:
            raise ValueError("num_workers must be >= 1")

    def lr(self, action_space: str) -> float:
        return self.lr_density if action_space == "density" else self.lr_spatial


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)   # pre-squash Gaussian samples
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    terminal: bool = False
    bootstrap: float = 0.0
    design: str = ""
    result: EpisodeResult | None = None
    placement: Placement | None = None
    worker: int = 0

    def __len__(self):
        return len(self.rewards)


def collect_trajectory(env, policy, noise_plan: NoiseFieldPlan | None = None, design: str | None = None,
                       max_steps: int | None = None) -> Trajectory:
    """Roll one episode.

    ``policy`` is a :class:`PolicyValueNet` (sampled with ``noise_plan``;
    zero noise when None, i.e. greedy) or a plain callable ``state -> action``.
    """
    cfg = env.config
    state = env.reset(design) if design is not None else env.reset()
    traj = Trajectory(design=design or getattr(getattr(env, "design", None), "name", ""))
    timing = getattr(env, "timing", None)
    while not env.done and (max_steps is None or len(traj) < max_steps):
        t0 = time.perf_counter()
        if isinstance(policy, PolicyValueNet):
            params, value = policy_value_forward(policy, state)
            if noise_plan is None:
                noise = np.zeros_like(params.mean)
            elif cfg.action_space == "density":
                noise = exploration_field(noise_plan, 1)[0, 0]
            else:
                noise = exploration_field(noise_plan, cfg.action_dims)
            action, lp = sample_action(params, noise, cfg.action_space)
            raw = action.raw
        else:
            action, lp, value, raw = policy(state), 0.0, 0.0, None
        if timing is not None:
            timing.policy_s += time.perf_counter() - t0
        traj.states.append(state)
        traj.actions.append(raw)
        traj.log_probs.append(float(lp))
        traj.values.append(float(value))
        state, reward, done = env.step(action)
        traj.rewards.append(float(reward))
    traj.terminal = env.done
    if not traj.terminal and isinstance(policy, PolicyValueNet):
        traj.bootstrap = float(policy_value_forward(policy, state)[1])
    traj.result = getattr(env, "result", None)
    placer = getattr(env, "placer", None)
    if placer is not None:
        traj.placement = placer.placement
    return traj


def n_step_targets(rewards, values, gamma: float, n: int, bootstrap: float = 0.0) -> np.ndarray:
    """Target at t: up to ``n`` discounted rewards plus the discounted value
    of the state reached, where the state past the last record is worth
    ``bootstrap`` (0 for a terminal episode)."""
    r = [float(v) for v in rewards]
    v = [float(x) for x in values] + [float(bootstrap)]
    T = len(r)
    out = np.empty(T)
    for t in range(T):
        m = min(n, T - t)
        terms = [gamma ** i * r[t + i] for i in range(m)]
        terms.append(gamma ** m * v[t + m])
        out[t] = math.fsum(terms)
    return out


def n_step_advantage(trajectory, values, gamma: float, n: int, bootstrap: float | None = None) -> np.ndarray:
    """``n_step_targets - values``; ``trajectory`` is a Trajectory or a reward list."""
    if isinstance(trajectory, Trajectory):
        rewards = trajectory.rewards
        if bootstrap is None:
            bootstrap = 0.0 if trajectory.terminal else trajectory.bootstrap
    else:
        rewards = trajectory
    targets = n_step_targets(rewards, values, gamma, n, bootstrap or 0.0)
    return targets - np.asarray(values, dtype=float)


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


@dataclass
class LossTerms:
    policy_loss: float
    value_loss: float
    entropy_term: float
    total: float


def a3c_losses(log_probs, advantages, values, targets, entropies, beta: float = 0.05,
               value_loss_weight: float = 0.5) -> LossTerms:
    lp = np.asarray(log_probs, dtype=float)
    adv = np.asarray(advantages, dtype=float)
    policy = -float(np.mean(lp * adv))
    value = float(np.mean((np.asarray(values, dtype=float) - np.asarray(targets, dtype=float)) ** 2))
    ent = float(np.mean(entropies))
    return LossTerms(policy, value, ent, policy + value_loss_weight * value - beta * ent)


def loss_and_output_grads(mean, raw, value, actions, advantages, targets, std_floor: float,
                          beta: float, value_loss_weight: float, scale: float = 1.0):
    """Loss terms of a batch plus gradients w.r.t. the network outputs.

    ``scale`` is ``batch / total`` when the batch is a chunk of a larger one,
    so chunk gradients add up to the full-batch gradient.
    """
    n = len(value)
    axes = tuple(range(1, np.ndim(mean)))
    std = softplus(raw) + std_floor
    u = np.asarray(actions, dtype=float).reshape(np.shape(mean))
    z = (u - mean) / std
    lp = np.sum(-0.5 * z * z - np.log(std) - 0.5 * math.log(2 * math.pi), axis=axes)
    ent = np.sum(0.5 * np.log(2 * math.pi * math.e * std ** 2), axis=axes)
    terms = a3c_losses(lp, advantages, value, targets, ent, beta, value_loss_weight)
    adv = np.asarray(advantages, dtype=float).reshape((n,) + (1,) * len(axes))
    g_mean, g_std = log_prob_grads(u, mean, std)
    d_mean = -adv * g_mean / n
    d_std = -adv * g_std / n - beta / (n * std)
    d_raw = d_std * sigmoid(raw)
    d_value = value_loss_weight * 2.0 * (value - np.asarray(targets, dtype=float)) / n
    return terms, d_mean * scale, d_raw * scale, d_value * scale


# --------------------------------------------------------------------------
# learner
# --------------------------------------------------------------------------


@dataclass
class UpdateStats:
    update: int
    policy_loss: float
    value_loss: float
    entropy: float
    grad_norm: float
    clipped_norm: float


class Learner:
    def __init__(self, net: PolicyValueNet, config: TrainerConfig):
        self.net = net
        self.config = config
        self.rule = RMSProp(config.rmsprop_alpha, config.rmsprop_eps)
        self.updates = 0

    def update(self, batch: list[Trajectory], progress: float = 0.0) -> UpdateStats:
        """One learner step; ``progress`` in [0, 1] drives the learning-rate decay."""
        cfg, net = self.config, self.net
        states = np.stack([s for t in batch for s in t.states])
        actions = np.stack([np.asarray(a, dtype=float) for t in batch for a in t.actions])
        N = len(states)
        chunk = max(1, cfg.learner_chunk)
        # values under the current parameters, then targets per trajectory
        values = np.concatenate([net.forward(states[i:i + chunk])[2] for i in range(0, N, chunk)]) \
            if N > chunk else None
        net.zero_grad()
        if values is None:
            mean, raw, values = net.forward(states)
        targets = np.empty(N)
        k = 0
        for t in batch:
            L = len(t)
            boot = 0.0 if t.terminal else t.bootstrap
            targets[k:k + L] = n_step_targets(t.rewards, values[k:k + L], cfg.gamma, cfg.n_step, boot)
            k += L
        adv = targets - values
        tot = LossTerms(0.0, 0.0, 0.0, 0.0)
        for i in range(0, N, chunk):
            sl = slice(i, min(N, i + chunk))
            if N > chunk:
                mean, raw, v = net.forward(states[sl])
                m_, r_ = mean, raw
            else:
                m_, r_, v = mean, raw, values
            scale = (sl.stop - sl.start) / N
            terms, dm, dr, dv = loss_and_output_grads(
                m_, r_, v, actions[sl], adv[sl], targets[sl], net.std_floor,
                cfg.beta, cfg.value_loss_weight, scale)
            net.backward(dm, dr, dv)
            tot = LossTerms(*(a + scale * b for a, b in zip(asdict(tot).values(), asdict(terms).values())))
        grads = net.gradients()
        norm = global_grad_norm(grads)
        clip_grad_norm(grads, cfg.grad_clip)
        lr = cfg.lr(net.action_space)
        if cfg.lr_decay:
            lr *= max(0.0, 1.0 - progress)
        optimizer_step(net.parameters(), grads, lr, self.rule)
        self.updates += 1
        return UpdateStats(self.updates, tot.policy_loss, tot.value_loss, tot.entropy_term,
                           norm, global_grad_norm(grads))


# --------------------------------------------------------------------------
# best-solution log and training loop
# --------------------------------------------------------------------------


@dataclass
class BestEntry:
    reward: float = -math.inf
    hpwl: float = math.nan
    placement_path: str = ""
    episode: int = -1


class BestSolutionLog:
    def __init__(self, out_dir=None):
        self.out_dir = Path(out_dir) if out_dir else None
        self.entries: dict[str, BestEntry] = {}

    def offer(self, traj: Trajectory, episode: int, netlist=None) -> bool:
        if traj.result is None:
            return False
        e = self.entries.setdefault(traj.design, BestEntry())
        r = traj.result.reward
        if not r > e.reward:
            return False
        path = ""
        if self.out_dir is not None and netlist is not None and traj.placement is not None:
            p = self.out_dir / f"best_{traj.design}.pl"
            write_placement(netlist, traj.placement, p)
            path = str(p)
        self.entries[traj.design] = BestEntry(r, traj.result.final_hpwl, path, episode)
        return True

    def best_reward(self, design: str) -> float:
        return self.entries.get(design, BestEntry()).reward

    def to_json(self) -> dict:
        return {k: asdict(v) for k, v in self.entries.items()}


CURVE_COLUMNS = ("episode", "design", "worker", "steps", "reward", "final_hpwl", "diverged",
                 "update", "policy_loss", "value_loss", "entropy", "grad_norm")


@dataclass
class TrainResult:
    best: BestSolutionLog
    curve: list
    updates: list
    env_steps: int
    episodes: int
    net: PolicyValueNet


class _Snapshot:
    """Latest published parameters; replaced atomically under a lock."""

    def __init__(self, state: dict):
        self._lock = threading.Lock()
        self.version, self.state = 0, state

    def publish(self, state: dict):
        with self._lock:
            self.version += 1
            self.state = state

    def get(self):
        with self._lock:
            return self.version, self.state


def train(make_env, net: PolicyValueNet, config: TrainerConfig, designs: list[str] | None = None,
          out_dir=None, netlists: dict | None = None, on_update=None, stop_when=None) -> TrainResult:
    """Train ``net`` in place.

    ``make_env(worker_id)`` builds one environment per worker; designs are
    visited round-robin by each worker. ``stop_when(best_log)`` may end
    training before the step or episode budget runs out.
    """
    cfg = config
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    best = BestSolutionLog(out)
    learner = Learner(net, cfg)
    curve: list[dict] = []
    updates: list[UpdateStats] = []
    counters = {"steps": 0, "episodes": 0, "diverged_run": 0}
    last = [None]
    netlists = netlists or {}

    def record(traj: Trajectory):
        ep = counters["episodes"]
        counters["episodes"] += 1
        counters["steps"] += len(traj)
        res = traj.result
        div = bool(res.diverged) if res is not None else False
        counters["diverged_run"] = counters["diverged_run"] + 1 if div else 0
        best.offer(traj, ep, netlists.get(traj.design))
        u = last[0]
        curve.append({
            "episode": ep, "design": traj.design, "worker": traj.worker, "steps": len(traj),
            "reward": res.reward if res else sum(traj.rewards),
            "final_hpwl": res.final_hpwl if res else float("nan"), "diverged": int(div),
            "update": u.update if u else 0, "policy_loss": u.policy_loss if u else float("nan"),
            "value_loss": u.value_loss if u else float("nan"),
            "entropy": u.entropy if u else float("nan"), "grad_norm": u.grad_norm if u else float("nan"),
        })
        if counters["diverged_run"] >= cfg.max_consecutive_divergence:
            reasons = [c["reward"] for c in curve[-5:]]
            raise TrainingAborted(
                f"{counters['diverged_run']} consecutive diverged episodes "
                f"(last rewards {reasons}, episode {ep}); lower the learning rate or check the design")

    def finished():
        if counters["steps"] >= cfg.max_train_steps:
            return True
        if stop_when is not None and stop_when(best):
            return True
        return cfg.max_episodes is not None and counters["episodes"] >= cfg.max_episodes

    def learn(batch):
        u = learner.update(batch, counters["steps"] / cfg.max_train_steps)
        updates.append(u)
        last[0] = u
        if on_update is not None:
            on_update(u)
        if out and cfg.checkpoint_every and u.update % cfg.checkpoint_every == 0:
            save_checkpoint(net.parameters(), out / "checkpoint.bin")

    if cfg.synchronous:
        _train_sync(make_env, net, cfg, designs, record, finished, learn)
    else:
        _train_async(make_env, net, cfg, designs, record, finished, learn)

    if out:
        save_checkpoint(net.parameters(), out / "checkpoint.bin")
        write_curve(curve, out / "training_curve.csv")
    return TrainResult(best, curve, updates, counters["steps"], counters["episodes"], net)


def _worker_plan(cfg: TrainerConfig, rng, action_dims: int) -> NoiseFieldPlan:
    res = list(cfg.noise_resolutions) if cfg.noise_resolutions else None
    return NoiseFieldPlan.new(action_dims, rng, theta=cfg.noise_theta, sigma=cfg.noise_sigma,
                              resolutions=res)


def _train_sync(make_env, net, cfg, designs, record, finished, learn):
    env = make_env(0)
    rng = np.random.default_rng([cfg.seed, 0])
    names = designs or [None]
    batch, k = [], 0
    while not finished():
        d = names[k % len(names)]
        k += 1
        plan = _worker_plan(cfg, rng, env.config.action_dims)
        traj = collect_trajectory(env, net, plan, d)
        if len(traj) == 0:
            continue
        record(traj)
        batch.append(traj)
        if len(batch) == cfg.batch_size_trajectories:
            learn(batch)
            batch = []


def _train_async(make_env, net, cfg, designs, record, finished, learn):
    q: queue.Queue = queue.Queue(maxsize=2 * cfg.batch_size_trajectories)
    stop = threading.Event()
    snap = _Snapshot(net.state_dict())
    errors: list[BaseException] = []
    names = designs or [None]

    def worker(wid: int):
        try:
            env = make_env(wid)
            local = net.like()
            rng = np.random.default_rng([cfg.seed, wid])
            seen, k = -1, wid
            while not stop.is_set():
                version, state = snap.get()
                if version != seen:
                    local.load_state_dict(state)
                    seen = version
                d = names[k % len(names)]
                k += 1
                try:
                    traj = collect_trajectory(env, local, _worker_plan(cfg, rng, env.config.action_dims), d)
                except Exception:  # environment failure: drop the episode
                    log.exception("worker %d: episode discarded", wid)
                    continue
                traj.worker = wid
                while not stop.is_set():
                    try:
                        q.put(traj, timeout=0.1)
                        break
                    except queue.Full:
                        pass
        except BaseException as exc:  # surfaced by the learner
            errors.append(exc)
            stop.set()

    threads = [threading.Thread(target=worker, args=(w,), daemon=True) for w in range(cfg.num_workers)]
    for t in threads:
        t.start()
    batch = []
    try:
        while not finished() and not errors:
            try:
                traj = q.get(timeout=0.1)
            except queue.Empty:
                continue
            if len(traj) == 0:
                continue
            record(traj)
            batch.append(traj)
            if len(batch) == cfg.batch_size_trajectories:
                learn(batch)
                batch = []
                snap.publish(net.state_dict())
    finally:
        stop.set()
        for t in threads:
            t.join(timeout=30)
    if errors:
        raise errors[0]


def write_curve(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CURVE_COLUMNS)
        w.writeheader()
        w.writerows(rows)


# --------------------------------------------------------------------------
# stub environment
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StubConfig:
    action_space: str = "density"
    action_dims: int = 2
    state_dims: int = 4
    channels: int = 2


class QuadraticBandit:
    """One-step episodes with a constant state and reward ``-(u - c)^2``
    (mean over pixels for the grid action), taken on the raw Gaussian sample."""

    def __init__(self, optimum: float, config: StubConfig | None = None):
        self.c = float(optimum)
        self.config = config or StubConfig()
        h, ch = self.config.state_dims, self.config.channels
        self.state = np.ones((h, h, ch))
        self.result = None
        self._done = True

    @property
    def done(self) -> bool:
        return self._done

    def reset(self, design=None):
        self._done = False
        self.result = None
        return self.state

    def step(self, action):
        u = np.asarray(action.raw, dtype=float)
        r = -float(np.mean((u - self.c) ** 2))
        self._done = True
        self.result = EpisodeResult(float("nan"), float("nan"), r, 1, False, 1, "bandit")
        return self.state, r, True
