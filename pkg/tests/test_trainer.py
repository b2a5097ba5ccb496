import math
from fractions import Fraction

import numpy as np
import pytest

from rlplace.agent import PolicyValueNet
from rlplace.env import EpisodeResult
from rlplace.trainer import (
    BestSolutionLog, Learner, QuadraticBandit, StubConfig, TrainerConfig, TrainingAborted,
    Trajectory, a3c_losses, loss_and_output_grads, n_step_advantage, n_step_targets, train,
)

from conftest import central_fd, norm_rel_err


def brute_force_advantage(rewards, values, gamma, n, bootstrap):
    """Exact rational sum of each target's terms, rounded once."""
    T = len(rewards)
    v = list(values) + [bootstrap]
    out = []
    for t in range(T):
        m = min(n, T - t)
        total = Fraction(0)
        for i in range(m):
            total += Fraction(gamma ** i * rewards[t + i])
        total += Fraction(gamma ** m * v[t + m])
        out.append(float(total) - values[t])
    return out


def test_advantage_examples():
    assert n_step_advantage([5.0], [2.0], 1.0, 5)[0] == 3.0
    assert n_step_advantage([0.0, 0.0, 10.0], [2.0, 0.0, 0.0], 1.0, 3)[0] == 8.0
    adv = n_step_advantage([1.0, 1.0], [2.0, 0.0], 0.9, 2, bootstrap=5.0)
    assert adv[0] == pytest.approx(3.95, abs=1e-12)


def test_advantage_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        T = int(rng.integers(1, 40))
        r = (rng.standard_normal(T) * rng.choice([1e-3, 1, 1e3])).tolist()
        v = rng.standard_normal(T).tolist()
        gamma = float(rng.choice([1.0, 0.99, 0.9, rng.uniform()]))
        n = int(rng.integers(1, 50))
        boot = float(rng.standard_normal()) if rng.uniform() < 0.5 else 0.0
        got = n_step_advantage(r, v, gamma, n, boot).tolist()
        assert got == brute_force_advantage(r, v, gamma, n, boot)


def test_terminal_reward_credits_every_step():
    r = [0.0] * 9 + [4.2]
    targets = n_step_targets(r, np.zeros(10), 1.0, 80)
    assert np.all(targets == 4.2)


def test_advantage_from_trajectory_uses_bootstrap():
    t = Trajectory(rewards=[1.0, 1.0], values=[2.0, 0.0], terminal=False, bootstrap=5.0)
    assert n_step_advantage(t, t.values, 0.9, 2)[0] == pytest.approx(3.95)
    t.terminal = True
    assert n_step_advantage(t, t.values, 0.9, 2)[0] == pytest.approx(1.9 - 2.0)


def test_loss_examples():
    z = a3c_losses([-1.0, -2.0], [0.0, 0.0], [1.0, 2.0], [1.0, 2.0], [0.3, 0.3])
    assert z.policy_loss == 0.0 and z.value_loss == 0.0
    one = a3c_losses([-2.0], [3.0], [0.0], [0.0], [0.0])
    assert one.policy_loss == 6.0


@pytest.mark.parametrize("shape", [(), (2, 2)])
def test_loss_output_grads(shape):
    rng = np.random.default_rng(1)
    for trial in range(5):
        n = 3
        mean = rng.standard_normal((n,) + shape)
        raw = rng.standard_normal((n,) + shape)
        value = rng.standard_normal(n)
        actions = rng.standard_normal((n,) + shape)
        adv, targets = rng.standard_normal(n), rng.standard_normal(n)
        kw = dict(actions=actions, advantages=adv, targets=targets, std_floor=0.01,
                  beta=0.05, value_loss_weight=0.5)
        _, dm, dr, dv = loss_and_output_grads(mean, raw, value, **kw)
        fm = central_fd(lambda m: loss_and_output_grads(m, raw, value, **kw)[0].total, mean)
        fr = central_fd(lambda r: loss_and_output_grads(mean, r, value, **kw)[0].total, raw)
        fv = central_fd(lambda v: loss_and_output_grads(mean, raw, v, **kw)[0].total, value)
        assert norm_rel_err(dm, fm) < 1e-4
        assert norm_rel_err(dr, fr) < 1e-4
        assert norm_rel_err(dv, fv) < 1e-4


def bandit_setup(space="density", **cfg):
    sc = StubConfig(action_space=space)
    net = PolicyValueNet(sc.channels, space, sc.state_dims, sc.action_dims, channels=4,
                         trunk_blocks=1, head_blocks=1, seed=0)
    base = dict(lr_density=3e-3, lr_spatial=2e-3, beta=0.0, max_train_steps=200, seed=0)
    base.update(cfg)
    return sc, net, TrainerConfig(**base)


def test_post_clip_norm_bounded():
    sc, net, cfg = bandit_setup()
    learner = Learner(net, cfg)
    env = QuadraticBandit(1e4, sc)  # huge rewards force clipping
    from rlplace.trainer import collect_trajectory
    from rlplace.noise import NoiseFieldPlan

    for k in range(5):
        batch = [collect_trajectory(env, net, NoiseFieldPlan.new(1, k)) for _ in range(4)]
        u = learner.update(batch)
        assert u.grad_norm > 8.0
        assert u.clipped_norm <= 8.0 + 1e-9


def test_sync_training_is_reproducible():
    curves = []
    for _ in range(2):
        sc, net, cfg = bandit_setup(max_train_steps=120)
        res = train(lambda w: QuadraticBandit(0.7, sc), net, cfg)
        curves.append(([c["reward"] for c in res.curve], [u.policy_loss for u in res.updates]))
    assert curves[0] == curves[1]
    assert len(curves[0][1]) == 30


def test_async_training_runs():
    sc, net, cfg = bandit_setup("spatial", max_train_steps=80, num_workers=2, synchronous=False)
    res = train(lambda w: QuadraticBandit(0.7, sc), net, cfg)
    assert res.env_steps >= 80 and len(res.updates) >= 20
    assert {c["worker"] for c in res.curve} == {0, 1}


def test_best_log_is_monotone(tmp_path):
    log = BestSolutionLog(tmp_path)
    best = []
    rng = np.random.default_rng(0)
    for ep in range(50):
        r = float(rng.standard_normal())
        t = Trajectory(design="d", result=EpisodeResult(100 - r, 100, r, 1, False))
        log.offer(t, ep)
        best.append(log.best_reward("d"))
    assert all(b >= a for a, b in zip(best, best[1:]))
    assert best[-1] == max(best)


class AlwaysDiverges(QuadraticBandit):
    def step(self, action):
        s, _, d = super().step(action)
        self.result = EpisodeResult(float("nan"), 1.0, -10.0, 1, True)
        return s, -10.0, d


def test_consecutive_divergence_aborts():
    sc, net, cfg = bandit_setup(max_consecutive_divergence=5)
    with pytest.raises(TrainingAborted, match="5 consecutive"):
        train(lambda w: AlwaysDiverges(0.0, sc), net, cfg)


def test_learning_rate_by_space():
    cfg = TrainerConfig()
    assert cfg.lr("density") == 4e-5 and cfg.lr("spatial") == 4e-6


def test_trainer_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(gamma=1.5)
    with pytest.raises(ValueError):
        TrainerConfig(n_step=0)
