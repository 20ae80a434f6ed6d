"""Thinning simulators for parametric and doubly stochastic Hawkes processes.

Every parameter path is materialised on a grid (``RealizedPath``) and read by
linear interpolation, so deterministic and stochastic models go through the
same simulator. Each event's kernel is frozen at the parameters in force at
its arrival time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from . import rng as rngmod
from .model import EventSequence, HawkesParams, ParamPath, _as_theta


class ExplosionError(RuntimeError):
    pass


# exp(-40) ~ 4e-18: kernels older than this are dropped
_PRUNE = 40.0


@dataclass(frozen=True)
class RealizedPath:
    path: ParamPath
    grid: np.ndarray
    values: np.ndarray  # (3, len(grid)), clamped
    seed: int
    dt: float
    cum: np.ndarray = field(init=False, repr=False)  # (3, len(grid)) integral from 0

    def __post_init__(self):
        g, v = self.grid, self.values
        inc = 0.5 * (v[:, 1:] + v[:, :-1]) * np.diff(g)
        cum = np.concatenate([np.zeros((3, 1)), np.cumsum(inc, axis=1)], axis=1)
        object.__setattr__(self, "cum", cum)

    @property
    def T(self) -> float:
        return self.path.T

    def theta_at(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.vstack([np.interp(t, self.grid, self.values[k]) for k in range(3)])

    def params_at(self, t: float) -> HawkesParams:
        return HawkesParams.from_array(self.theta_at([t])[:, 0])

    def integral(self, t0: float = 0.0, t1: Optional[float] = None) -> np.ndarray:
        """Exact integral of the interpolated path over [t0, t1]."""
        t1 = self.T if t1 is None else t1
        return _cum_at(self, t1) - _cum_at(self, t0)

    def integrated_parameter(self) -> np.ndarray:
        """(1/T) int_0^T theta_t dt."""
        return self.integral(0.0, self.T) / self.T

    def sup_ratio(self) -> float:
        return float(np.max(self.values[1] / self.values[2]))


def _cum_at(rp: RealizedPath, t: float) -> np.ndarray:
    g = rp.grid
    j = int(np.clip(np.searchsorted(g, t, side="right") - 1, 0, g.size - 2))
    h = t - g[j]
    slope = (rp.values[:, j + 1] - rp.values[:, j]) / (g[j + 1] - g[j])
    return rp.cum[:, j] + rp.values[:, j] * h + 0.5 * slope * h * h


def default_dt_path(path: ParamPath, block_length: Optional[float] = None) -> float:
    cands = []
    if block_length is not None:
        cands.append(block_length / 20.0)
    if path.kind in ("seasonal_smoothed_bm", "smoothed_bm"):
        cands.append(path.tau / 20.0)
    if not cands:
        cands.append(path.T / 2000.0)
    return min(cands)


def realize_path(path: ParamPath, seed: int, dt_path: Optional[float] = None) -> RealizedPath:
    """Draw the nuisance Brownian component (if any) and tabulate theta on a grid."""
    if dt_path is None:
        dt_path = default_dt_path(path)
    if dt_path <= 0:
        raise ValueError("dt_path must be positive")
    T = path.T
    if path.kind in ("seasonal_smoothed_bm", "smoothed_bm"):
        tau = path.tau
        m = max(int(math.ceil(tau / dt_path - 1e-9)), 10)
        dt = tau / m
        n_pos = int(math.ceil(T / dt - 1e-9))
        # W on [-tau, n_pos*dt], W(-tau) = 0
        gen = rngmod.stream(seed, 0)
        steps = gen.standard_normal((3, m + n_pos)) * math.sqrt(dt)
        W = np.concatenate([np.zeros((3, 1)), np.cumsum(steps, axis=1)], axis=1)
        I = np.concatenate([np.zeros((3, 1)), np.cumsum(0.5 * (W[:, 1:] + W[:, :-1]) * dt, axis=1)], axis=1)
        smooth = (I[:, m:] - I[:, :-m]) / tau
        grid = np.arange(n_pos + 1) * dt
        sigma = np.asarray(path.sigma)[:, None]
        values = path.trend(grid) + sigma * smooth
    else:
        n_pos = max(int(math.ceil(T / dt_path - 1e-9)), 1)
        dt = T / n_pos
        grid = np.arange(n_pos + 1) * dt
        values = path.trend(grid)
    values = path.clamp(values)
    return RealizedPath(path, grid, np.ascontiguousarray(values), int(seed), float(dt))


@dataclass(frozen=True)
class SimConfig:
    seed: int
    T: float
    n_scale: int = 1
    max_events: int = 5_000_000

    def __post_init__(self):
        if self.n_scale < 1:
            raise ValueError("n_scale must be >= 1")
        if self.max_events <= 0:
            raise ValueError("max_events must be positive")


@njit(cache=True)
def _interp_cell(grid, vals, j, t):
    w = (t - grid[j]) / (grid[j + 1] - grid[j])
    return vals[j] + w * (vals[j + 1] - vals[j])


@njit(cache=True)
def _sim_tv(gen, grid, nu, a, b, T, n, max_events):
    """Thinning with per-event frozen kernels; returns (times, status)."""
    cap = 1024
    out = np.empty(cap)
    ka = np.empty(cap)  # frozen n*a of active kernels
    kb = np.empty(cap)
    kt = np.empty(cap)
    first = 0  # active kernels are first..count-1
    count = 0
    t = 0.0
    j = 0
    ng = grid.size
    while True:
        while j < ng - 2 and grid[j + 1] <= t:
            j += 1
        w = grid[j + 1]
        if w > T:
            w = T
        # nu is linear on the cell, so its max over [t, w] sits at an end
        nu_bar = n * max(_interp_cell(grid, nu, j, t), _interp_cell(grid, nu, j, w))
        excit = 0.0
        for k in range(first, count):
            x = kb[k] * (t - kt[k])
            if x > _PRUNE and k == first:
                first += 1
                continue
            excit += ka[k] * math.exp(-x)
        lam_bar = nu_bar + excit
        s = t + gen.standard_exponential() / lam_bar
        if s >= w:
            t = w
            if t >= T:
                break
            continue
        t = s
        lam = n * _interp_cell(grid, nu, j, t)
        for k in range(first, count):
            lam += ka[k] * math.exp(-kb[k] * (t - kt[k]))
        if gen.random() * lam_bar <= lam:
            if count >= max_events:
                return out[:count], 1
            if count == cap:
                cap *= 2
                out2 = np.empty(cap)
                out2[:count] = out[:count]
                out = out2
                a2 = np.empty(cap)
                a2[:count] = ka[:count]
                ka = a2
                b2 = np.empty(cap)
                b2[:count] = kb[:count]
                kb = b2
                t2 = np.empty(cap)
                t2[:count] = kt[:count]
                kt = t2
            out[count] = t
            kt[count] = t
            ka[count] = n * _interp_cell(grid, a, j, t)
            kb[count] = n * _interp_cell(grid, b, j, t)
            count += 1
    return out[:count].copy(), 0


@njit(cache=True)
def sim_const_hawkes(gen, nu, a, b, L, max_events):
    """Ogata thinning for constant (nu, a, b) on (0, L]; status 1 on overflow."""
    cap = 256
    out = np.empty(cap)
    t = 0.0
    excit = 0.0  # excitation just after time t
    count = 0
    while True:
        lam_bar = nu + excit
        s = t + gen.standard_exponential() / lam_bar
        if s > L:
            break
        excit *= math.exp(-b * (s - t))
        t = s
        if gen.random() * lam_bar <= nu + excit:
            if count >= max_events:
                return out[:count], 1
            if count == cap:
                cap *= 2
                o2 = np.empty(cap)
                o2[:count] = out[:count]
                out = o2
            out[count] = t
            count += 1
            excit += a
    return out[:count].copy(), 0


def simulate_hawkes(cfg: SimConfig, realized: RealizedPath) -> EventSequence:
    """Simulate the (scaled) time-varying Hawkes process on [0, cfg.T]."""
    if cfg.T > realized.grid[-1] + 1e-9:
        raise ValueError("realized path shorter than the simulation horizon")
    gen = rngmod.stream(cfg.seed, 1)
    v = realized.values
    times, status = _sim_tv(gen, realized.grid, v[0], v[1], v[2], float(cfg.T), float(cfg.n_scale),
                            int(cfg.max_events))
    if status:
        raise ExplosionError(
            f"more than {cfg.max_events} events (sup a/b = {realized.sup_ratio():.3f}); "
            "parameters are near or beyond criticality"
        )
    return EventSequence(times, cfg.T)


def simulate_parametric(theta, T: float, seed: int, max_events: int = 5_000_000) -> EventSequence:
    nu, a, b = _as_theta(theta)
    gen = rngmod.stream(seed, 1)
    times, status = sim_const_hawkes(gen, nu, a, b, float(T), int(max_events))
    if status:
        raise ExplosionError(f"more than {max_events} events for theta={(nu, a, b)}")
    return EventSequence(times, T)


@njit(cache=True)
def _sim_cox(gen, grid, theta, T, n, rate_max):
    cap = 1024
    out = np.empty(cap)
    count = 0
    t = 0.0
    while True:
        t += gen.standard_exponential() / rate_max
        if t > T:
            break
        j = np.searchsorted(grid, t, side="right") - 1
        if j > grid.size - 2:
            j = grid.size - 2
        rate = n * math.sqrt(_interp_cell(grid, theta, j, t))
        if gen.random() * rate_max <= rate:
            if count == cap:
                cap *= 2
                o2 = np.empty(cap)
                o2[:count] = out[:count]
                out = o2
            out[count] = t
            count += 1
    return out[:count].copy()


def simulate_cox_sqrt(theta_path, n_scale: float, T: float, seed: int) -> EventSequence:
    """Doubly stochastic Poisson process with rate n * sqrt(theta_t) (first component)."""
    if isinstance(theta_path, RealizedPath):
        realized = theta_path
    else:
        realized = realize_path(theta_path, seed)
    theta = np.ascontiguousarray(realized.values[0])
    if np.any(theta < 0):
        raise ValueError("theta path must be nonnegative")
    rate_max = n_scale * math.sqrt(theta.max())
    gen = rngmod.stream(seed, 2)
    times = _sim_cox(gen, realized.grid, theta, float(T), float(n_scale), rate_max)
    return EventSequence(times, T)


@njit(cache=True)
def _rescale_const(times, nu, a, b):
    out = np.empty(times.size)
    R = 0.0  # sum of exp(-b (t_prev - t_j)) over j <= prev, inclusive
    prev = 0.0
    for i in range(times.size):
        d = times[i] - prev
        e = math.exp(-b * d)
        out[i] = nu * d + (a / b) * R * (1.0 - e)
        R = R * e + 1.0
        prev = times[i]
    return out


@njit(cache=True)
def _rescale_tv(times, grid, cum_nu, nu, a, b, n):
    out = np.empty(times.size)
    ka = np.empty(times.size)
    kb = np.empty(times.size)
    first = 0
    prev = 0.0
    prev_cum = 0.0
    for i in range(times.size):
        t = times[i]
        j = np.searchsorted(grid, t, side="right") - 1
        if j > grid.size - 2:
            j = grid.size - 2
        h = t - grid[j]
        slope = (nu[j + 1] - nu[j]) / (grid[j + 1] - grid[j])
        c = cum_nu[j] + nu[j] * h + 0.5 * slope * h * h
        inc = n * (c - prev_cum)
        for k in range(first, i):
            x0 = kb[k] * (prev - times[k])
            if x0 > _PRUNE and k == first:
                first += 1
                continue
            inc += (ka[k] / kb[k]) * (math.exp(-x0) - math.exp(-kb[k] * (t - times[k])))
        out[i] = inc
        ka[i] = n * _interp_cell(grid, a, j, t)
        kb[i] = n * _interp_cell(grid, b, j, t)
        prev = t
        prev_cum = c
    return out


def time_rescale(model, events: EventSequence, n_scale: float = 1.0) -> np.ndarray:
    """Compensator increments between consecutive events (first one from time 0).

    ``model`` is either constant parameters or a ``RealizedPath``.
    """
    times = events.times
    if isinstance(model, RealizedPath):
        v = model.values
        return _rescale_tv(times, model.grid, np.ascontiguousarray(model.cum[0]), v[0], v[1], v[2], float(n_scale))
    nu, a, b = _as_theta(model) * n_scale
    return _rescale_const(times, nu, a, b)
