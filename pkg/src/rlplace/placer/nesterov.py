"""Nesterov accelerated gradient with Lipschitz step prediction and backtracking."""

from __future__ import annotations

import numpy as np


class Nesterov:
    """Minimizes over a box ``lo <= z <= hi``.

    Each :meth:`step` takes the objective gradient ``g`` at the reference
    point ``v`` together with a (possibly rescaled) descent direction
    ``d``. The trial step length comes from the secant estimate
    ``|v - v_prev| / |d - d_prev|`` and is halved until

        f(u_new) <= f(v) + 0.5 * <g, u_new - v>

    which for an unprojected step is the usual quadratic model
    ``f(v) - alpha/2 * <g, d>``.
    """

    def __init__(self, z0: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                 alpha0: float, max_backtracks: int = 10):
        self.lo, self.hi = lo, hi
        self.u = np.clip(z0, lo, hi)
        self.v = self.u.copy()
        self.a = 1.0
        self.alpha = alpha0
        self.max_backtracks = max_backtracks
        self._v_prev = None
        self._d_prev = None
        self.last_backtracks = 0

    def step(self, f_v: float, g: np.ndarray, d: np.ndarray, cost_fn):
        """Advance one iteration; ``cost_fn(z)`` returns (cost, aux).

        Returns the aux value of the accepted trial point.
        """
        if not np.any(d):
            # nothing may move: hold position and drop momentum
            self.v = self.u.copy()
            self.a = 1.0
            self._v_prev = self._d_prev = None
            self.last_backtracks = 0
            return cost_fn(self.u)[1]
        if self._v_prev is not None:
            dv = np.linalg.norm(self.v - self._v_prev)
            dd = np.linalg.norm(d - self._d_prev)
            if dd > 0 and dv > 0:
                self.alpha = dv / dd
        alpha = self.alpha
        aux = None
        for k in range(self.max_backtracks + 1):
            u_new = np.clip(self.v - alpha * d, self.lo, self.hi)
            f_new, aux = cost_fn(u_new)
            if f_new <= f_v + 0.5 * float(np.dot(g, u_new - self.v)):
                break
            if k < self.max_backtracks:
                alpha *= 0.5
        self.last_backtracks = k
        self.alpha = alpha
        a_new = 0.5 * (1.0 + np.sqrt(4.0 * self.a * self.a + 1.0))
        v_new = np.clip(u_new + (self.a - 1.0) / a_new * (u_new - self.u), self.lo, self.hi)
        self._v_prev, self._d_prev = self.v, d
        self.u, self.v, self.a = u_new, v_new, a_new
        return aux
