import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rlplace.noise import (
    NoiseFieldPlan, OUProcess, base_resolutions, bilinear_upsample, exploration_field, ou_step,
    sample_episode_field, upsample_matrix,
)


def ou_trace(steps, chains, theta=0.15, sigma=0.3, seed=0):
    proc = OUProcess(theta, sigma)
    proc.state = np.zeros(chains)
    rng = np.random.default_rng(seed)
    burn = int(20 / theta)
    out = np.empty((steps, chains))
    for t in range(burn + steps):
        s = ou_step(proc, rng.standard_normal(chains))
        if t >= burn:
            out[t - burn] = s
    return proc, out


def smoothness(f):
    return 0.5 * (np.mean(np.abs(np.diff(f, axis=0))) + np.mean(np.abs(np.diff(f, axis=1))))


def test_deterministic_decay():
    p = OUProcess(theta=0.1, sigma=0.0, state=1.0)
    assert ou_step(p, 0.7) == pytest.approx(0.9, abs=1e-15)
    q = OUProcess(theta=0.3, sigma=0.0, mu=2.0, state=2.0)
    for _ in range(10):
        ou_step(q, 1.0)
    assert q.state == 2.0


def test_stationary_variance():
    proc, tr = ou_trace(100_000, 1)
    assert np.var(tr) == pytest.approx(proc.stationary_var, rel=0.05)


def test_autocorrelation():
    theta = 0.15
    _, tr = ou_trace(100_000, 1, theta=theta, seed=1)
    x = tr[:, 0] - tr[:, 0].mean()
    v = np.dot(x, x) / len(x)
    for k in range(1, int(1 / theta) + 1):
        rho = np.dot(x[:-k], x[k:]) / (len(x) - k) / v
        assert rho == pytest.approx((1 - theta) ** k, rel=0.10), k


def test_bilinear_examples():
    f = bilinear_upsample(np.array([[0.0, 1.0], [1.0, 2.0]]), (3, 3))
    assert f[1, 1] == 1.0
    base = np.random.default_rng(0).standard_normal((4, 4))
    np.testing.assert_array_equal(bilinear_upsample(base, (4, 4)), base)
    const = bilinear_upsample(np.array([[0.3]]), (5, 5))
    assert np.all(const == 0.3)


@settings(max_examples=50, deadline=None)
@given(base=arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
                   elements=st.floats(-1e3, 1e3)),
       n=st.integers(1, 17))
def test_upsample_is_convex(base, n):
    f = bilinear_upsample(base, (n, n))
    assert f.min() >= base.min() - 1e-9 and f.max() <= base.max() + 1e-9


def test_upsample_rows_sum_to_one():
    m = upsample_matrix(32, 4)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)
    assert np.all(np.count_nonzero(m, axis=1) <= 2)


def test_base_resolutions():
    assert base_resolutions(32) == [1, 2, 4, 8, 16]
    assert base_resolutions(1) == [1]
    assert base_resolutions(3) == [1, 2]


def test_plan_is_seeded():
    a = NoiseFieldPlan.new(32, 7)
    b = NoiseFieldPlan.new(32, 7)
    assert a.base_resolution == b.base_resolution
    assert np.array_equal(sample_episode_field(a, 32), sample_episode_field(b, 32))
    seen = {NoiseFieldPlan.new(32, s).base_resolution[0] for s in range(200)}
    assert seen == {1, 2, 4, 8, 16}


def test_smoother_than_iid():
    A, wins = 32, 0
    rng = np.random.default_rng(0)
    for trial in range(100):
        coarse = NoiseFieldPlan.new(A, rng, resolutions=[2])
        iid = NoiseFieldPlan.new(A, rng, resolutions=[A])
        wins += smoothness(sample_episode_field(coarse, A)) < smoothness(sample_episode_field(iid, A))
    assert wins >= 95


def test_exploration_field_unit_variance():
    rng = np.random.default_rng(3)
    vals = []
    for _ in range(200):
        plan = NoiseFieldPlan.new(8, rng, resolutions=[4])
        for _ in range(10):
            vals.append(exploration_field(plan, 8))
    v = np.var(np.stack(vals), axis=0)
    assert np.mean(v) == pytest.approx(1.0, rel=0.05)


def test_bad_parameters():
    with pytest.raises(ValueError):
        OUProcess(theta=0.0)
    with pytest.raises(ValueError):
        OUProcess(sigma=-1.0)
