"""Gaussian actor-critic over the placement state tensor.

A shared residual conv trunk feeds a value head (mean-pool + linear) and a
policy head: a linear layer for the scalar density-weight action or a small
fully convolutional branch for the per-region gradient weights. The policy
emits a mean and a raw spread per action dimension with
``std = softplus(raw) + std_floor``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import AvgPool, Conv2d, Linear, MeanPool, Module, ReLU, ResidualBlock
from .placer.control import W_HI, W_LO

ACTION_SPACES = ("density", "spatial")
STD_FLOOR = 0.01
COF_SPAN = 0.1
COF_LO, COF_HI = 1.0 - COF_SPAN, 1.0 + COF_SPAN
_LOG_2PI = math.log(2.0 * math.pi)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class GaussianParams:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class ActionValue:
    """Squashed action plus the Gaussian sample ``raw`` it came from."""

    raw: np.ndarray
    cof_override: float | None = None
    spatial: np.ndarray | None = None


class PolicyValueNet(Module):
    """Input is a batch of ``(H, W, C)`` states; outputs are batched."""

    def __init__(self, in_channels: int = 11, action_space: str = "density", state_dims: int = 32,
                 action_dims: int = 32, channels: int = 16, trunk_blocks: int = 3,
                 head_blocks: int = 2, std_floor: float = STD_FLOOR, seed=0, dtype=np.float64):
        super().__init__()
        if action_space not in ACTION_SPACES:
            raise ValueError(f"action_space must be one of {ACTION_SPACES}, got {action_space!r}")
        if action_space == "spatial" and (action_dims > state_dims or state_dims % action_dims):
            raise ValueError(f"action grid {action_dims} must divide state grid {state_dims}")
        if not std_floor > 0:
            raise ValueError("std_floor must be > 0")
        self.arch = dict(in_channels=in_channels, action_space=action_space, state_dims=state_dims,
                         action_dims=action_dims, channels=channels, trunk_blocks=trunk_blocks,
                         head_blocks=head_blocks, std_floor=std_floor, dtype=np.dtype(dtype).name)
        rng = np.random.default_rng(seed)
        self.in_channels, self.state_dims, self.action_dims = in_channels, state_dims, action_dims
        self.action_space, self.std_floor, self.dtype = action_space, std_floor, np.dtype(dtype)

        self.conv_in = self.add("trunk_in", Conv2d(in_channels, channels, 3, rng, dtype=dtype))
        self.relu_in = ReLU()
        self.trunk = [self.add(f"trunk{i}", ResidualBlock(channels, rng, dtype)) for i in range(trunk_blocks)]
        self.pool = MeanPool()
        self.value_fc = self.add("value", Linear(channels, 1, rng, scale=0.1, dtype=dtype))
        if action_space == "density":
            self.policy_fc = self.add("policy", Linear(channels, 2, rng, scale=0.01, dtype=dtype))
            # start near the heuristic's growth phase: cof = 1 + 0.1 * tanh(atanh(0.5)) = 1.05
            self.policy_fc.params["bias"][0] = math.atanh(0.5)
        else:
            self.head = [self.add(f"policy{i}", ResidualBlock(channels, rng, dtype)) for i in range(head_blocks)]
            self.policy_out = self.add("policy_out", Conv2d(channels, 2, 3, rng, scale=0.01, dtype=dtype))
            self.policy_pool = AvgPool(state_dims // action_dims)

    def like(self, seed=0) -> "PolicyValueNet":
        """Fresh network with the same architecture."""
        return PolicyValueNet(**self.arch, seed=seed)

    # ---- forward / backward ------------------------------------------------

    def forward(self, states):
        """Returns ``(mean, raw, value)``; raw is the pre-softplus spread."""
        x = np.asarray(states, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        exp = (self.state_dims, self.state_dims, self.in_channels)
        if x.ndim != 4 or x.shape[1:] != exp:
            raise ValueError(f"state shape mismatch: got {np.shape(states)}, expected (N, {exp[0]}, {exp[1]}, {exp[2]})")
        h = self.relu_in.forward(self.conv_in.forward(x))
        for blk in self.trunk:
            h = blk.forward(h)
        pooled = self.pool.forward(h)
        value = self.value_fc.forward(pooled)[:, 0]
        if self.action_space == "density":
            out = self.policy_fc.forward(pooled)
            return out[:, 0], out[:, 1], value
        p = h
        for blk in self.head:
            p = blk.forward(p)
        out = self.policy_pool.forward(self.policy_out.forward(p))
        return out[..., 0], out[..., 1], value

    def backward(self, d_mean, d_raw, d_value):
        """Accumulate parameter gradients for upstream gradients on the outputs."""
        d_pooled = self.value_fc.backward(np.asarray(d_value, dtype=self.dtype)[:, None])
        if self.action_space == "density":
            d_pooled = d_pooled + self.policy_fc.backward(np.stack([d_mean, d_raw], axis=1).astype(self.dtype))
            dh = self.pool.backward(d_pooled)
        else:
            dp = self.policy_out.backward(self.policy_pool.backward(np.stack([d_mean, d_raw], axis=-1).astype(self.dtype)))
            for blk in reversed(self.head):
                dp = blk.backward(dp)
            dh = self.pool.backward(d_pooled) + dp
        for blk in reversed(self.trunk):
            dh = blk.backward(dh)
        self.conv_in.backward(self.relu_in.backward(dh))

    def std(self, raw):
        return softplus(raw) + self.std_floor


def policy_value_forward(net: PolicyValueNet, state) -> tuple[GaussianParams, np.ndarray]:
    """Single state -> unbatched outputs; a batch stays batched."""
    batched = np.ndim(state) == 4
    mean, raw, value = net.forward(state)
    params = GaussianParams(mean, net.std(raw))
    if batched:
        return params, value
    return GaussianParams(mean[0], params.std[0]), value[0]


# --------------------------------------------------------------------------
# distribution helpers
# --------------------------------------------------------------------------


def squash_density(u):
    return np.clip(1.0 + COF_SPAN * np.tanh(u), COF_LO, COF_HI)


def squash_spatial(u, w_lo: float = W_LO, w_hi: float = W_HI):
    return np.exp(np.clip(u, math.log(w_lo), math.log(w_hi)))


def log_prob(u, mean, std) -> float:
    """Log-density of the (pre-squash) sample, summed over dimensions."""
    z = (np.asarray(u) - mean) / std
    return float(np.sum(-0.5 * z * z - np.log(std) - 0.5 * _LOG_2PI))


def log_prob_grads(u, mean, std):
    """Elementwise d log_prob / d mean and d log_prob / d std."""
    diff = np.asarray(u) - mean
    return diff / std ** 2, diff ** 2 / std ** 3 - 1.0 / std


def entropy(params: GaussianParams) -> float:
    return float(np.sum(0.5 * np.log(2.0 * math.pi * math.e * np.asarray(params.std) ** 2)))


def sample_action(params: GaussianParams, noise_field, action_space: str = "density",
                  w_lo: float = W_LO, w_hi: float = W_HI) -> tuple[ActionValue, float]:
    """``u = mean + std * noise``, squashed into the placer's admissible range."""
    noise = np.asarray(noise_field, dtype=float)
    mean = np.asarray(params.mean, dtype=float)
    if noise.size == 1 and mean.size == 1:
        noise = noise.reshape(mean.shape)
    if noise.shape != mean.shape:
        raise ValueError(f"noise shape {noise.shape} does not match action shape {mean.shape}")
    u = mean + params.std * noise
    lp = log_prob(u, mean, params.std)
    if action_space == "density":
        return ActionValue(u, cof_override=float(squash_density(u))), lp
    return ActionValue(u, spatial=squash_spatial(u, w_lo, w_hi)), lp


def save_policy(net: PolicyValueNet, path) -> None:
    """Parameters in the binary checkpoint format plus a ``.json`` sidecar
    describing the architecture."""
    import json
    from pathlib import Path

    from .nn import save_checkpoint

    path = Path(path)
    save_checkpoint(net.parameters(), path)
    path.with_suffix(".json").write_text(json.dumps(net.arch, indent=2) + "\n")


def load_policy(path, **overrides) -> PolicyValueNet:
    import json
    from pathlib import Path

    from .nn import load_checkpoint

    path = Path(path)
    params = load_checkpoint(path)
    side = path.with_suffix(".json")
    arch = json.loads(side.read_text()) if side.exists() else {}
    arch.update(overrides)
    net = PolicyValueNet(**arch)
    net.load_state_dict({k: v.astype(net.dtype) for k, v in params.items()})
    return net
