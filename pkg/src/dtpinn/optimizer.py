"""Limited-memory BFGS with a strong Wolfe line search.

One call to :meth:`Lbfgs.step` is one training epoch: a two-loop-recursion
direction followed by a line search over the full objective.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np


class LineSearchError(RuntimeError):
    """No step satisfying the strong Wolfe conditions was found."""


@dataclass
class LbfgsConfig:
    history: int = 50
    lr: float = 1.0
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_ls: int = 25
    max_epochs: int = 5000
    tol_grad: float = 1e-12
    tol_change: float = 1e-15

    def __post_init__(self):
        if not 0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.history < 0:
            raise ValueError("history must be non-negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    @classmethod
    def from_mapping(cls, cfg):
        """Accepts ``lbfgs.*`` keys (``lbfgs.lr``, ``lbfgs.wolfe_c1`` ...)."""
        kw = {}
        for key, val in cfg.items():
            name = key.split(".", 1)[1] if key.startswith("lbfgs.") else key
            if name in cls.__dataclass_fields__:
                kw[name] = type(getattr(cls, name))(val)
        return cls(**kw)


def _cubic_min(x1, f1, g1, x2, f2, g2, lo=None, hi=None):
    """Minimiser of the cubic through two points with slopes, clipped to [lo, hi]."""
    if lo is None:
        lo, hi = min(x1, x2), max(x1, x2)
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    disc = d1 * d1 - g1 * g2
    if disc >= 0.0:
        d2 = math.sqrt(disc)
        if x1 <= x2:
            t = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        else:
            t = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        if math.isfinite(t):
            return min(max(t, lo), hi)
    return 0.5 * (lo + hi)


def strong_wolfe(phi, f0, d0, t, c1=1e-4, c2=0.9, max_evals=25, tol_change=1e-15):
    """Find t with f(t) <= f0 + c1 t d0 and |f'(t)| <= c2 |d0|.

    ``phi(t)`` returns ``(f, grad, slope)``. Returns ``(t, f, grad, n_evals)``
    or raises :class:`LineSearchError`.
    """
    if not d0 < 0:
        raise LineSearchError("not a descent direction")
    evals = 0
    t_prev, f_prev, d_prev = 0.0, f0, d0
    bracket = None
    while evals < max_evals:
        f_t, g_t, d_t = phi(t)
        evals += 1
        if not math.isfinite(f_t):
            # step overshot into overflow: shrink and retry
            bracket = None
            t = 0.5 * (t_prev + t)
            continue
        if f_t > f0 + c1 * t * d0 or (evals > 1 and f_t >= f_prev):
            bracket = [(t_prev, f_prev, d_prev), (t, f_t, d_t)]
            break
        if abs(d_t) <= -c2 * d0:
            return t, f_t, g_t, evals
        if d_t >= 0:
            bracket = [(t, f_t, d_t), (t_prev, f_prev, d_prev)]
            break
        lo = t + 0.01 * (t - t_prev)
        t_new = _cubic_min(t_prev, f_prev, d_prev, t, f_t, d_t, lo, 10.0 * t)
        t_prev, f_prev, d_prev = t, f_t, d_t
        t = t_new
    if bracket is None:
        raise LineSearchError(f"no bracket after {evals} evaluations")

    # zoom: bracket[0] is the best point so far (satisfies sufficient decrease)
    lo_pt, hi_pt = bracket
    while evals < max_evals:
        (a_lo, f_lo, d_lo), (a_hi, f_hi, d_hi) = lo_pt, hi_pt
        width = abs(a_hi - a_lo)
        if width * max(abs(d_lo), abs(d_hi), 1e-300) < tol_change or width < 1e-20:
            break
        left, right = min(a_lo, a_hi), max(a_lo, a_hi)
        t = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
        # keep the trial away from the ends of the bracket
        eps = 0.1 * (right - left)
        if min(right - t, t - left) < eps:
            t = 0.5 * (left + right)
        f_t, g_t, d_t = phi(t)
        evals += 1
        if not math.isfinite(f_t) or f_t > f0 + c1 * t * d0 or f_t >= f_lo:
            hi_pt = (t, f_t if math.isfinite(f_t) else math.inf, d_t)
        else:
            if abs(d_t) <= -c2 * d0:
                return t, f_t, g_t, evals
            if d_t * (a_hi - a_lo) >= 0:
                hi_pt = lo_pt
            lo_pt = (t, f_t, d_t)
    raise LineSearchError(f"zoom did not satisfy strong Wolfe within {evals} evaluations")


class Lbfgs:
    """L-BFGS state machine over a flat parameter vector.

    ``closure(x)`` must return ``(loss, gradient)`` and be deterministic in x.
    """

    def __init__(self, x0, config: LbfgsConfig | None = None):
        self.config = config or LbfgsConfig()
        self.x = np.array(x0, copy=True)
        self.s_hist = deque(maxlen=max(self.config.history, 1))
        self.y_hist = deque(maxlen=max(self.config.history, 1))
        self.f = None
        self.g = None
        self.epoch = 0
        self.func_evals = 0
        self.converged = False

    def reset_memory(self):
        self.s_hist.clear()
        self.y_hist.clear()

    def direction(self, g):
        """Two-loop recursion: approximate -H g from the stored curvature pairs."""
        q = g.astype(np.float64, copy=True)
        if self.config.history == 0 or not self.s_hist:
            return -q
        alphas = []
        rhos = [1.0 / float(y @ s) for s, y in zip(self.s_hist, self.y_hist)]
        for s, y, rho in zip(reversed(self.s_hist), reversed(self.y_hist), reversed(rhos)):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * y
        s, y = self.s_hist[-1], self.y_hist[-1]
        q *= float(s @ y) / float(y @ y)
        for (s, y, rho), a in zip(zip(self.s_hist, self.y_hist, rhos), reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        return -q

    def _evaluate(self, closure, x):
        f, g = closure(x)
        self.func_evals += 1
        return float(f), np.asarray(g, dtype=np.float64)

    def step(self, closure):
        """One epoch. Returns ``(x, loss)``; raises LineSearchError leaving state unchanged."""
        cfg = self.config
        if self.f is None:
            self.f, self.g = self._evaluate(closure, self.x)
        if self.converged or np.max(np.abs(self.g)) <= cfg.tol_grad:
            self.converged = True
            return self.x, self.f

        d = self.direction(self.g)
        gd = float(self.g @ d)
        if not gd < 0:
            # stale curvature information: fall back to steepest descent
            self.reset_memory()
            d = -self.g
            gd = float(self.g @ d)
        if -gd <= cfg.tol_change:
            # predicted decrease is below what the loss can resolve
            self.converged = True
            return self.x, self.f
        if self.s_hist:
            t0 = cfg.lr
        else:
            t0 = min(1.0, 1.0 / float(np.sum(np.abs(self.g)))) * cfg.lr

        x0 = self.x.astype(np.float64)
        dtype = self.x.dtype

        def phi(t):
            xt = (x0 + t * d).astype(dtype)
            f, g = self._evaluate(closure, xt)
            return f, g, float(g @ d)

        t, f_new, g_new, _ = strong_wolfe(phi, self.f, gd, t0, cfg.wolfe_c1, cfg.wolfe_c2,
                                          cfg.max_ls, cfg.tol_change)
        x_new = (x0 + t * d).astype(dtype)
        s = x_new.astype(np.float64) - x0
        y = g_new - self.g
        sy = float(s @ y)
        if cfg.history > 0 and sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            self.s_hist.append(s)
            self.y_hist.append(y)
        if abs(f_new - self.f) < cfg.tol_change or np.max(np.abs(s)) < cfg.tol_change:
            self.converged = True
        self.x, self.f, self.g = x_new, f_new, g_new
        self.epoch += 1
        return self.x, self.f
