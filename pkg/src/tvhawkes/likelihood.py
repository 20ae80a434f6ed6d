"""Exponential-kernel quasi-log-likelihoods with exact first and second derivatives.

Block events are re-origined so the block is [0, L]; the candidate intensity
ignores excitation carried over from before the block. All evaluations are a
single pass over the events carrying the recursion

    A_1 = 0,   A_i = exp(-b d_i) (1 + A_{i-1}),   d_i = t_i - t_{i-1}

together with dA/db and d2A/db2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import EventSequence, HawkesParams, _as_theta, seasonal_mean


class EvaluationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LikelihoodEval:
    loglik: float
    gradient: np.ndarray
    hessian: np.ndarray
    event_count: int


@njit(cache=True)
def hawkes_loglik_full(times, L, nu, a, b):
    """(loglik, gradient, hessian, ok) for theta=(nu, a, b) on [0, L]."""
    g = np.zeros(3)
    H = np.zeros((3, 3))
    ll = 0.0
    A = 0.0
    dA = 0.0
    d2A = 0.0
    S = 0.0  # sum (1 - exp(-b u_i)),  u_i = L - t_i
    U1 = 0.0  # sum u_i exp(-b u_i)
    U2 = 0.0  # sum u_i^2 exp(-b u_i)
    ok = True
    prev = 0.0
    for i in range(times.size):
        t = times[i]
        if i > 0:
            d = t - prev
            e = math.exp(-b * d)
            d2A = e * (d * d * (1.0 + A) - 2.0 * d * dA + d2A)
            dA = e * (-d * (1.0 + A) + dA)
            A = e * (1.0 + A)
        prev = t
        lam = nu + a * A
        if not lam > 0.0:
            ok = False
            break
        inv = 1.0 / lam
        ll += math.log(lam)
        j0 = 1.0
        j1 = A
        j2 = a * dA
        g[0] += j0 * inv
        g[1] += j1 * inv
        g[2] += j2 * inv
        inv2 = inv * inv
        H[0, 0] -= j0 * j0 * inv2
        H[0, 1] -= j0 * j1 * inv2
        H[0, 2] -= j0 * j2 * inv2
        H[1, 1] -= j1 * j1 * inv2
        H[1, 2] += dA * inv - j1 * j2 * inv2
        H[2, 2] += a * d2A * inv - j2 * j2 * inv2
        u = L - t
        eu = math.exp(-b * u)
        S += 1.0 - eu
        U1 += u * eu
        U2 += u * u * eu
    ll -= nu * L + (a / b) * S
    g[0] -= L
    g[1] -= S / b
    g[2] -= -(a / (b * b)) * S + (a / b) * U1
    H[1, 2] -= -S / (b * b) + U1 / b
    H[2, 2] -= 2.0 * a / (b * b * b) * S - 2.0 * a / (b * b) * U1 - (a / b) * U2
    H[1, 0] = H[0, 1]
    H[2, 0] = H[0, 2]
    H[2, 1] = H[1, 2]
    return ll, g, H, ok


@njit(cache=True)
def hawkes_loglik_value(times, L, nu, a, b):
    """Log-likelihood only; -inf when some intensity is not positive."""
    ll = 0.0
    A = 0.0
    S = 0.0
    prev = 0.0
    for i in range(times.size):
        t = times[i]
        if i > 0:
            A = math.exp(-b * (t - prev)) * (1.0 + A)
        prev = t
        lam = nu + a * A
        if not lam > 0.0:
            return -np.inf
        ll += math.log(lam)
        S += 1.0 - math.exp(-b * (L - t))
    return ll - nu * L - (a / b) * S


def _block_times(events, block):
    if isinstance(events, EventSequence):
        times = events.times
    else:
        times = np.asarray(events, dtype=float)
    if block is None:
        if not isinstance(events, EventSequence):
            raise ValueError("block required when passing raw times")
        return times, float(events.horizon)
    start, end = float(block[0]), float(block[1])
    if end <= start:
        raise ValueError(f"empty block {block}")
    lo = np.searchsorted(times, start, side="right")
    hi = np.searchsorted(times, end, side="right")
    return np.ascontiguousarray(times[lo:hi] - start), end - start


def block_loglik(theta, events, block=None) -> LikelihoodEval:
    """Quasi-log-likelihood on ``block=(start, end)`` (default: the whole window)."""
    times, L = _block_times(events, block)
    nu, a, b = _as_theta(theta)
    ll, g, H, ok = hawkes_loglik_full(times, L, nu, a, b)
    if not ok:
        raise EvaluationError(f"non-positive intensity at theta={(nu, a, b)}")
    return LikelihoodEval(float(ll), g, H, int(times.size))


# ---------------------------------------------------------------------------
# seasonal-baseline competitor: nu_t = e^{b1} + (q x - p (1 - x))^2, x = t/T


@dataclass(frozen=True)
class CHParams:
    beta: tuple
    a: float
    b: float

    def as_array(self) -> np.ndarray:
        return np.array([*self.beta, self.a, self.b], dtype=float)

    @classmethod
    def from_array(cls, x) -> "CHParams":
        x = np.asarray(x, dtype=float)
        return cls(tuple(float(v) for v in x[:3]), float(x[3]), float(x[4]))

    @property
    def mean_nu(self) -> float:
        return seasonal_mean(self.beta)

    def summary(self) -> HawkesParams:
        """(time-averaged baseline, a, b) for comparison with integrated estimates."""
        return HawkesParams(self.mean_nu, self.a, self.b)


@njit(cache=True)
def ch_loglik_full(times, T, b1, b2, b3, a, b):
    g = np.zeros(5)
    H = np.zeros((5, 5))
    e1 = math.exp(b1)
    p = math.exp(b2)
    q = math.exp(b3)
    ll = 0.0
    A = 0.0
    dA = 0.0
    d2A = 0.0
    S = 0.0
    U1 = 0.0
    U2 = 0.0
    prev = 0.0
    ok = True
    J = np.zeros(5)
    for i in range(times.size):
        t = times[i]
        if i > 0:
            d = t - prev
            e = math.exp(-b * d)
            d2A = e * (d * d * (1.0 + A) - 2.0 * d * dA + d2A)
            dA = e * (-d * (1.0 + A) + dA)
            A = e * (1.0 + A)
        prev = t
        x = t / T
        lin = q * x - p * (1.0 - x)
        base = e1 + lin * lin
        lam = base + a * A
        if not lam > 0.0:
            ok = False
            break
        inv = 1.0 / lam
        ll += math.log(lam)
        px = p * (1.0 - x)
        qx = q * x
        J[0] = e1
        J[1] = -2.0 * lin * px
        J[2] = 2.0 * lin * qx
        J[3] = A
        J[4] = a * dA
        for r in range(5):
            g[r] += J[r] * inv
            for c in range(r, 5):
                H[r, c] -= J[r] * J[c] * inv * inv
        H[0, 0] += e1 * inv
        H[1, 1] += (2.0 * px * px - 2.0 * lin * px) * inv
        H[2, 2] += (2.0 * qx * qx + 2.0 * lin * qx) * inv
        H[1, 2] += -2.0 * px * qx * inv
        H[3, 4] += dA * inv
        H[4, 4] += a * d2A * inv
        u = T - t
        eu = math.exp(-b * u)
        S += 1.0 - eu
        U1 += u * eu
        U2 += u * u * eu
    ll -= T * (e1 + (p * p - p * q + q * q) / 3.0) + (a / b) * S
    g[0] -= T * e1
    g[1] -= T * (2.0 * p * p - p * q) / 3.0
    g[2] -= T * (2.0 * q * q - p * q) / 3.0
    g[3] -= S / b
    g[4] -= -(a / (b * b)) * S + (a / b) * U1
    H[0, 0] -= T * e1
    H[1, 1] -= T * (4.0 * p * p - p * q) / 3.0
    H[2, 2] -= T * (4.0 * q * q - p * q) / 3.0
    H[1, 2] -= -T * p * q / 3.0
    H[3, 4] -= -S / (b * b) + U1 / b
    H[4, 4] -= 2.0 * a / (b * b * b) * S - 2.0 * a / (b * b) * U1 - (a / b) * U2
    for r in range(5):
        for c in range(r):
            H[r, c] = H[c, r]
    return ll, g, H, ok


def ch_loglik(params: CHParams, events: EventSequence, T: float | None = None) -> LikelihoodEval:
    """Full-window likelihood with the seasonal baseline; derivatives in (b1, b2, b3, a, b)."""
    T = events.horizon if T is None else float(T)
    x = params.as_array()
    ll, g, H, ok = ch_loglik_full(events.times, T, *x)
    if not ok:
        raise EvaluationError(f"non-positive intensity at {params}")
    return LikelihoodEval(float(ll), g, H, len(events))
