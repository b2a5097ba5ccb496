"""Small numpy neural-network kernel with hand-written backward passes.

Layers keep ``params`` and ``grads`` dicts; ``backward`` accumulates into
``grads`` so a large batch can be processed in chunks. Activations are laid
out (N, H, W, C); convolutions use im2col and recompute the columns on the
way back instead of caching them.
"""

from __future__ import annotations

import io
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

# --------------------------------------------------------------------------
# functional ops
# --------------------------------------------------------------------------


def _im2col(x, k, pad):
    """(N, H, W, C) -> rows of (k, k, C) patches, one row per output pixel."""
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    ho, wo = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    cols = np.empty((n, ho, wo, k, k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + ho, j:j + wo, :]
    return cols.reshape(n * ho * wo, k * k * c), ho, wo


def _wmat(w):
    o, c, k, _ = w.shape
    return w.transpose(2, 3, 1, 0).reshape(k * k * c, o)


def conv2d_forward(x, w, b, pad: int):
    """Stride-1 2-D cross-correlation; ``x`` is (N, H, W, C), ``w`` is (O, C, k, k)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[1]:
        raise ValueError(f"conv2d shape mismatch: input {x.shape} vs weight {w.shape}")
    o, _, k, _ = w.shape
    cols, ho, wo = _im2col(x, k, pad)
    out = cols @ _wmat(w)
    out += b
    return out.reshape(x.shape[0], ho, wo, o)


def conv2d_backward(dout, x, w, pad: int):
    """Returns (dx, dw, db) for :func:`conv2d_forward`."""
    n, h, wd, c = x.shape
    o, _, k, _ = w.shape
    cols, ho, wo = _im2col(x, k, pad)
    d2 = dout.reshape(-1, o)
    dw = (cols.T @ d2).reshape(k, k, c, o).transpose(3, 2, 0, 1)
    db = d2.sum(axis=0)
    dcols = (d2 @ _wmat(w).T).reshape(n, ho, wo, k, k, c)
    dxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, c), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    dx = dxp[:, pad:pad + h, pad:pad + wd, :] if pad else dxp
    return dx, dw, db


def fc_forward(x, w, b):
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"fc shape mismatch: input {x.shape} vs weight {w.shape}")
    return x @ w + b


def fc_backward(dout, x, w):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    return dout * (x > 0)


def residual_add(x, branch):
    if x.shape != branch.shape:
        raise ValueError(f"residual shape mismatch: {x.shape} vs {branch.shape}")
    return x + branch


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------


class Module:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.children: "OrderedDict[str, Module]" = OrderedDict()

    def add(self, name: str, module: "Module") -> "Module":
        self.children[name] = module
        return module

    def named_parameters(self, prefix: str = ""):
        for k, v in self.params.items():
            yield prefix + k, v
        for name, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_grads(self, prefix: str = ""):
        for k, v in self.grads.items():
            yield prefix + k, v
        for name, child in self.children.items():
            yield from child.named_grads(f"{prefix}{name}.")

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict(self.named_parameters())

    def gradients(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict(self.named_grads())

    def zero_grad(self):
        for g in self.gradients().values():
            g[...] = 0

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.copy()) for k, v in self.named_parameters())

    def load_state_dict(self, state: dict):
        own = self.parameters()
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise ValueError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for k, v in own.items():
            if v.shape != np.shape(state[k]):
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {np.shape(state[k])}")
            np.copyto(v, state[k])


class Conv2d(Module):
    def __init__(self, cin, cout, k=3, rng=None, scale=1.0, dtype=np.float64):
        super().__init__()
        rng = np.random.default_rng(rng)
        std = scale * np.sqrt(2.0 / (cin * k * k))
        self.pad = k // 2
        self.params = {"weight": (std * rng.standard_normal((cout, cin, k, k))).astype(dtype),
                       "bias": np.zeros(cout, dtype=dtype)}
        self.grads = {k_: np.zeros_like(v) for k_, v in self.params.items()}

    def forward(self, x):
        self._x = x
        return conv2d_forward(x, self.params["weight"], self.params["bias"], self.pad)

    def backward(self, dout):
        dx, dw, db = conv2d_backward(dout, self._x, self.params["weight"], self.pad)
        self.grads["weight"] += dw
        self.grads["bias"] += db
        return dx


class Linear(Module):
    def __init__(self, nin, nout, rng=None, scale=1.0, dtype=np.float64):
        super().__init__()
        rng = np.random.default_rng(rng)
        std = scale * np.sqrt(1.0 / nin)
        self.params = {"weight": (std * rng.standard_normal((nin, nout))).astype(dtype),
                       "bias": np.zeros(nout, dtype=dtype)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x):
        self._x = x
        return fc_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, dout):
        dx, dw, db = fc_backward(dout, self._x, self.params["weight"])
        self.grads["weight"] += dw
        self.grads["bias"] += db
        return dx


class ReLU(Module):
    def forward(self, x):
        self._x = x
        return relu_forward(x)

    def backward(self, dout):
        return relu_backward(dout, self._x)


class ResidualBlock(Module):
    """relu(x + conv(relu(conv(x))))"""

    def __init__(self, channels, rng=None, dtype=np.float64):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.conv1 = self.add("conv1", Conv2d(channels, channels, 3, rng, dtype=dtype))
        self.conv2 = self.add("conv2", Conv2d(channels, channels, 3, rng, scale=0.5, dtype=dtype))
        self.relu1, self.relu2 = ReLU(), ReLU()

    def forward(self, x):
        h = self.relu1.forward(self.conv1.forward(x))
        return self.relu2.forward(residual_add(x, self.conv2.forward(h)))

    def backward(self, dout):
        d = self.relu2.backward(dout)
        dh = self.conv1.backward(self.relu1.backward(self.conv2.backward(d)))
        return d + dh


class MeanPool(Module):
    """Global spatial mean: (N, H, W, C) -> (N, C)."""

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout):
        n, h, w, c = self._shape
        return np.broadcast_to(dout[:, None, None, :] / (h * w), self._shape).copy()


class AvgPool(Module):
    """Non-overlapping ``f x f`` average pooling."""

    def __init__(self, f: int):
        super().__init__()
        self.f = f

    def forward(self, x):
        n, h, w, c = x.shape
        f = self.f
        if h % f or w % f:
            raise ValueError(f"pool factor {f} does not divide input {x.shape}")
        return x.reshape(n, h // f, f, w // f, f, c).mean(axis=(2, 4))

    def backward(self, dout):
        f = self.f
        return np.repeat(np.repeat(dout, f, axis=1), f, axis=2) / (f * f)


# --------------------------------------------------------------------------
# gradient utilities and optimizers
# --------------------------------------------------------------------------


def global_grad_norm(grads) -> float:
    vals = grads.values() if isinstance(grads, dict) else grads
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in vals)))


def clip_grad_norm(grads, max_norm: float):
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``.

    Works in place on a dict of arrays (also returned); a list is returned as
    a new list.
    """
    norm = global_grad_norm(grads)
    if norm <= max_norm or norm == 0:
        return grads
    s = max_norm / norm
    if isinstance(grads, dict):
        for g in grads.values():
            g *= s
        return grads
    return [np.asarray(g) * s for g in grads]


class RMSProp:
    """Running mean of squared gradients; step is ``g / (sqrt(ms) + eps)``."""

    def __init__(self, alpha: float = 0.99, eps: float = 0.01):
        self.alpha, self.eps = alpha, eps
        self.square_avg: dict[str, np.ndarray] = {}

    def direction(self, name: str, g: np.ndarray) -> np.ndarray:
        sq = self.square_avg.get(name)
        if sq is None:
            sq = self.square_avg[name] = np.zeros_like(g)
        sq *= self.alpha
        sq += (1 - self.alpha) * g * g
        return g / (np.sqrt(sq) + self.eps)


def optimizer_step(params: dict, grads: dict, lr: float, rule: RMSProp | None = None) -> dict:
    """In-place update ``p -= lr * direction``; plain gradient when ``rule`` is None."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    if lr == 0:
        return params
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch for {name}: param {p.shape} vs grad {g.shape}")
        d = g if rule is None else rule.direction(name, g)
        p -= (lr * d).astype(p.dtype, copy=False)
    return params


# --------------------------------------------------------------------------
# checkpoint format
# --------------------------------------------------------------------------

MAGIC = b"RLPW"
VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


class CheckpointError(ValueError):
    pass


def dumps_params(params: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(params)))
    for name, arr in params.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_TAGS:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", _DTYPE_TAGS[dt], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return buf.getvalue()


def loads_params(data: bytes) -> "OrderedDict[str, np.ndarray]":
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("bad magic: not a parameter checkpoint")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", view, off)
            off += 2
            name = bytes(view[off:off + nlen]).decode("utf-8")
            off += nlen
            tag, rank = struct.unpack_from("<BB", view, off)
            off += 2
            dims = struct.unpack_from(f"<{rank}I", view, off)
            off += 4 * rank
            dt = _TAG_DTYPES[tag]
            nbytes = dt.itemsize * int(np.prod(dims, dtype=np.int64))
            if off + nbytes > len(view):
                raise CheckpointError(f"truncated payload for {name}")
            out[name] = np.frombuffer(view[off:off + nbytes], dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
            off += nbytes
    except (struct.error, KeyError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if off != len(view):
        raise CheckpointError(f"{len(view) - off} trailing bytes after last record")
    return out


def save_checkpoint(params: dict, path) -> None:
    Path(path).write_bytes(dumps_params(params))


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    return loads_params(Path(path).read_bytes())
