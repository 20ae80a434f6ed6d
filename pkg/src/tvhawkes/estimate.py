"""Block-local maximum likelihood, naive aggregation and the plug-in variance.

The block optimiser is a projected Newton method in log-coordinates
(log nu, log a, log b) with the box mapped to log-space. The Hessian is the
exact analytic one, with eigenvalues reflected/floored when it is not
negative definite.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from numba import njit
from scipy import optimize

from .likelihood import CHParams, ch_loglik_full, hawkes_loglik_full, hawkes_loglik_value
from .model import (
    DEFAULT_BOX,
    PARAM_NAMES,
    BlockPartition,
    EventSequence,
    HawkesParams,
    ParamBox,
    seasonal_curve,
)


class EstimationError(RuntimeError):
    pass


GRAD_TOL = 1e-8
MAX_ITER = 200
BOUNDARY_TOL = 1e-8


@njit(cache=True)
def _newton(times, L, x0, lo, hi, free, fixed, tol, maxit):
    """Maximise the block likelihood from log-start x0.

    Returns (theta, loglik, grad, hess, converged, iterations).
    """
    x = x0.copy()
    for k in range(3):
        if x[k] < lo[k]:
            x[k] = lo[k]
        elif x[k] > hi[k]:
            x[k] = hi[k]
    theta = np.empty(3)
    for k in range(3):
        theta[k] = math.exp(x[k]) if free[k] else fixed[k]
    ll, g, H, ok = hawkes_loglik_full(times, L, theta[0], theta[1], theta[2])
    converged = False
    it = 0
    blind = 0
    polished = False
    while True:
        gx = theta * g
        # active constraints: at a bound with the gradient pushing outward
        inactive = np.zeros(3, dtype=np.bool_)
        pg = 0.0
        for k in range(3):
            if not free[k]:
                continue
            at_lo = x[k] <= lo[k] + 1e-12 and gx[k] < 0.0
            at_hi = x[k] >= hi[k] - 1e-12 and gx[k] > 0.0
            if not (at_lo or at_hi):
                inactive[k] = True
                if abs(g[k]) > pg:
                    pg = abs(g[k])
        if pg <= tol * max(1.0, abs(ll)):
            converged = True
            # one polishing Newton step unless already at rounding level
            if polished or pg <= 1e-4 * tol * max(1.0, abs(ll)):
                break
            polished = True
        if it >= maxit:
            break
        idx = np.nonzero(inactive)[0]
        m = idx.size
        Hx = np.empty((m, m))
        for r in range(m):
            for c in range(m):
                i = idx[r]
                j = idx[c]
                Hx[r, c] = -theta[i] * theta[j] * H[i, j]
            Hx[r, r] -= gx[idx[r]]
        w, V = np.linalg.eigh(Hx)
        wmax = np.max(np.abs(w))
        floor = 1e-8 * wmax if wmax > 0 else 1.0
        rhs = np.empty(m)
        for r in range(m):
            rhs[r] = gx[idx[r]]
        coef = V.T @ rhs
        for r in range(m):
            wr = abs(w[r])
            if wr < floor:
                wr = floor
            coef[r] /= wr
        dsub = V @ coef
        d = np.zeros(3)
        big = 0.0
        for r in range(m):
            d[idx[r]] = dsub[r]
            if abs(dsub[r]) > big:
                big = abs(dsub[r])
        if big > 2.0:
            d *= 2.0 / big
        pred = 0.0
        for k in range(3):
            pred += gx[k] * d[k]
        # near the optimum the predicted gain drops below the rounding level
        # of the log-likelihood and Armijo tests are noise: take the full step
        tiny = pred <= 1e-10 * max(1.0, abs(ll))
        if tiny:
            blind += 1
            if blind > 10:
                break
        alpha = 1.0
        accepted = False
        xn = np.empty(3)
        tn = theta.copy()
        for _ in range(40):
            for k in range(3):
                if free[k]:
                    v = x[k] + alpha * d[k]
                    if v < lo[k]:
                        v = lo[k]
                    elif v > hi[k]:
                        v = hi[k]
                    xn[k] = v
                    tn[k] = math.exp(v)
                else:
                    xn[k] = x[k]
            lln = hawkes_loglik_value(times, L, tn[0], tn[1], tn[2])
            if tiny:
                accepted = lln > -np.inf
                break
            dec = 0.0
            for k in range(3):
                dec += gx[k] * (xn[k] - x[k])
            if lln >= ll + 1e-4 * dec and lln > -np.inf:
                accepted = True
                break
            alpha *= 0.5
        it += 1
        if not accepted:
            break
        x[:] = xn
        theta[:] = tn
        ll, g, H, ok = hawkes_loglik_full(times, L, theta[0], theta[1], theta[2])
    return theta, ll, g, H, converged, it


@njit(cache=True)
def _multistart(times, L, starts, lo, hi, free, fixed, tol, maxit):
    best_theta = np.empty(3)
    best_ll = -np.inf
    best_g = np.zeros(3)
    best_H = np.zeros((3, 3))
    best_conv = False
    best_norm = np.inf
    for s in range(starts.shape[0]):
        theta, ll, g, H, conv, it = _newton(times, L, starts[s], lo, hi, free, fixed, tol, maxit)
        nrm = math.sqrt(theta[0] ** 2 + theta[1] ** 2 + theta[2] ** 2)
        if ll > best_ll or (ll == best_ll and nrm < best_norm):
            best_theta[:] = theta
            best_ll = ll
            best_g = g
            best_H = H
            best_conv = conv
            best_norm = nrm
    return best_theta, best_ll, best_g, best_H, best_conv


@njit(cache=True)
def moment_start(times, L, lo, hi):
    """Rough start: branching ratio 1/2, decay from the short-gap time scale."""
    n = times.size
    nu0 = 0.5 * n / L
    if n >= 4:
        gaps = np.diff(times)
        q = np.quantile(gaps, 0.25)
        b0 = 0.5 / q if q > 0 else math.exp(0.5 * (lo[2] + hi[2]))
    else:
        b0 = math.exp(0.5 * (lo[2] + hi[2]))
    x = np.array([math.log(max(nu0, 1e-300)), math.log(0.5 * b0), math.log(b0)])
    for k in range(3):
        x[k] = min(max(x[k], lo[k]), hi[k])
    return x


@dataclass(frozen=True)
class BlockEstimate:
    theta_hat: HawkesParams
    hessian_at_hat: np.ndarray
    converged: bool
    n_events: int
    on_boundary: tuple
    loglik: float = float("nan")
    gradient: np.ndarray = field(default_factory=lambda: np.zeros(3), repr=False)
    free: tuple = (True, True, True)
    degenerate: bool = False
    block: tuple = (0.0, 0.0)

    @property
    def theta(self) -> np.ndarray:
        return self.theta_hat.as_array()

    def kkt_residual(self, box: ParamBox = DEFAULT_BOX) -> float:
        """Max |gradient| over free coordinates not held at a bound by the gradient sign."""
        th, g = self.theta, self.gradient
        res = 0.0
        for k in range(3):
            if not self.free[k]:
                continue
            at_lo = th[k] <= box.lo[k] * (1 + BOUNDARY_TOL) and g[k] < 0
            at_hi = th[k] >= box.hi[k] * (1 - BOUNDARY_TOL) and g[k] > 0
            if not (at_lo or at_hi):
                res = max(res, abs(g[k]))
        return res


def _fixed_arrays(fixed):
    """(free mask, fixed values) from None, a {name: value} mapping or a 3-sequence with NaN = free."""
    vals = np.full(3, np.nan)
    if fixed is None:
        pass
    elif isinstance(fixed, dict):
        for name, v in fixed.items():
            vals[PARAM_NAMES.index(name)] = float(v)
    else:
        vals = np.asarray(fixed, dtype=float).reshape(3).copy()
    free = np.isnan(vals)
    return free, vals


def _as_array(theta) -> np.ndarray:
    return theta.as_array() if isinstance(theta, HawkesParams) else np.asarray(theta, dtype=float).reshape(3)


def _flags(theta, box, free):
    lo, hi = box.lo, box.hi
    return tuple(
        bool(f and (abs(theta[k] - lo[k]) <= BOUNDARY_TOL * max(1.0, lo[k])
                    or abs(theta[k] - hi[k]) <= BOUNDARY_TOL * max(1.0, hi[k])))
        for k, f in enumerate(free)
    )


def _poisson_estimate(times, L, box, free, vals, block):
    n = times.size
    nu = min(max(n / L, box.lo[0]), box.hi[0])
    theta = np.array([nu, 0.0, vals[2] if not np.isnan(vals[2]) else 1.0])
    ll, g, H, ok = hawkes_loglik_full(times, L, theta[0], 0.0, theta[2])
    free_t = (True, False, False)
    return BlockEstimate(HawkesParams.from_array(theta), H, True, int(n), _flags(theta, box, free_t),
                         float(ll), g, free_t, n == 0, block)


def fit_block_mle(
    events,
    block=None,
    box: ParamBox = DEFAULT_BOX,
    fixed=None,
    warm_start=None,
    tol: float = GRAD_TOL,
    max_iter: int = MAX_ITER,
    n_scale: Optional[float] = None,
) -> BlockEstimate:
    """Local MLE on ``block=(start, end)``; events are re-origined at the block start.

    ``fixed`` pins coordinates, e.g. ``{"a": 0.0}`` for the Poisson sub-model.
    With ``n_scale`` the intensity is n * lambda(theta): box, fixed values and
    the result are on the theta scale (the feasible fit of n * theta, divided by n).
    """
    if n_scale is not None:
        n = float(n_scale)
        sbox = ParamBox(HawkesParams.from_array(box.lo * n), HawkesParams.from_array(box.hi * n))
        free, vals = _fixed_arrays(fixed)
        sfixed = None if np.all(free) else np.where(free, np.nan, vals * n)
        warm = None if warm_start is None else _as_array(warm_start) * n
        raw = fit_block_mle(events, block, sbox, sfixed, warm, tol, max_iter)
        return dataclasses.replace(raw, theta_hat=HawkesParams.from_array(raw.theta / n),
                                   hessian_at_hat=raw.hessian_at_hat * n * n, gradient=raw.gradient * n)
    if isinstance(events, EventSequence):
        all_times = events.times
        if block is None:
            block = (0.0, events.horizon)
    else:
        all_times = np.asarray(events, dtype=float)
        if block is None:
            raise ValueError("block required for raw event times")
    start, end = float(block[0]), float(block[1])
    if not end > start:
        raise ValueError(f"empty block {block}")
    lo_i = np.searchsorted(all_times, start, side="right")
    hi_i = np.searchsorted(all_times, end, side="right")
    times = np.ascontiguousarray(all_times[lo_i:hi_i] - start)
    L = end - start
    block = (start, end)
    free, vals = _fixed_arrays(fixed)
    if not free[1] and vals[1] == 0.0:
        return _poisson_estimate(times, L, box, free, vals, block)
    if times.size == 0:
        theta = np.sqrt(box.lo * box.hi)
        theta[0] = box.lo[0]
        theta = np.where(free, theta, vals)
        ll, g, H, ok = hawkes_loglik_full(times, L, *theta)
        return BlockEstimate(HawkesParams.from_array(theta), H, False, 0, _flags(theta, box, free),
                             float(ll), g, tuple(bool(f) for f in free), True, block)
    lo, hi = np.log(box.lo), np.log(box.hi)
    starts = [0.5 * (lo + hi), moment_start(times, L, lo, hi)]
    if warm_start is not None:
        starts.append(np.log(np.clip(_as_array(warm_start), box.lo, box.hi)))
    starts = np.array(starts)
    fixed_log = np.where(free, 0.0, vals)
    for k in range(3):
        if not free[k]:
            starts[:, k] = math.log(vals[k]) if vals[k] > 0 else 0.0
    theta, ll, g, H, conv = _multistart(times, L, starts, lo, hi, free, fixed_log, tol, max_iter)
    return BlockEstimate(
        HawkesParams.from_array(theta), H, bool(conv), int(times.size), _flags(theta, box, free),
        float(ll), g, tuple(bool(f) for f in free), False, block,
    )


def fit_global_mle(events: EventSequence, T: Optional[float] = None, box: ParamBox = DEFAULT_BOX) -> BlockEstimate:
    T = events.horizon if T is None else T
    return fit_block_mle(events, (0.0, T), box)


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class IntegratedEstimate:
    theta_bar: np.ndarray
    C_hat: np.ndarray
    per_block: list
    method: str = "naive"
    z: Optional[np.ndarray] = None
    correction: Optional[np.ndarray] = None  # per-block subtracted bias, (B, 3)
    diagnostics: dict = field(default_factory=dict)

    @property
    def std_error(self) -> np.ndarray:
        return np.sqrt(np.diag(self.C_hat))

    def confidence_interval(self, level: float = 0.95) -> np.ndarray:
        from scipy.stats import norm

        q = norm.ppf(0.5 + level / 2)
        se = self.std_error
        return np.column_stack([self.theta_bar - q * se, self.theta_bar + q * se])

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "theta_bar": self.theta_bar.tolist(),
            "C_hat": self.C_hat.tolist(),
            "ci95": self.confidence_interval().tolist(),
            "diagnostics": self.diagnostics,
            "per_block": [
                {
                    "start": be.block[0],
                    "end": be.block[1],
                    "n_events": be.n_events,
                    "nu": be.theta_hat.nu,
                    "a": be.theta_hat.a,
                    "b": be.theta_hat.b,
                    "loglik": be.loglik,
                    "converged": be.converged,
                    "degenerate": be.degenerate,
                    "on_boundary": list(be.on_boundary),
                }
                for be in self.per_block
            ],
        }
        if self.correction is not None:
            out["bias_correction"] = self.correction.tolist()
        if self.z is not None:
            out["z"] = self.z.tolist()
        return out


def fit_blocks(events: EventSequence, partition: BlockPartition, box: ParamBox = DEFAULT_BOX,
               warm: bool = True) -> list:
    out = []
    prev = None
    for start, end in partition.boundaries:
        est = fit_block_mle(events, (start, end), box, warm_start=prev if warm else None)
        out.append(est)
        if warm and not est.degenerate:
            prev = est.theta_hat
    return out


def block_variance(est: BlockEstimate) -> tuple:
    """(-H)^{-1} on the free coordinates, eigenvalue-floored; returns (matrix, regularized)."""
    free = np.array(est.free)
    M = -0.5 * (est.hessian_at_hat + est.hessian_at_hat.T)
    sub = M[np.ix_(free, free)]
    w, V = np.linalg.eigh(sub)
    floor = 1e-10 * np.trace(sub)
    regularized = bool(w.min() <= floor)
    if regularized:
        if floor <= 0:
            raise EstimationError("block information matrix has no positive mass")
        w = np.maximum(w, floor)
    out = np.zeros((3, 3))
    out[np.ix_(free, free)] = (V / w) @ V.T
    return out, regularized


def variance_hat(per_block: Sequence[BlockEstimate], max_flagged: float = 0.10) -> tuple:
    """C_n = B^{-2} sum_i (-H_i)^{-1}; returns (C_hat, diagnostics)."""
    B = len(per_block)
    if B == 0:
        raise EstimationError("no blocks")
    total = np.zeros((3, 3))
    n_degenerate = 0
    n_regularized = 0
    for est in per_block:
        if est.degenerate:
            n_degenerate += 1
            continue
        try:
            V, reg = block_variance(est)
        except EstimationError:
            n_degenerate += 1
            continue
        n_regularized += reg
        total += V
    if n_degenerate == B:
        raise EstimationError("every block is degenerate")
    flagged = n_degenerate + n_regularized
    if flagged > max_flagged * B:
        raise EstimationError(
            f"{flagged} of {B} blocks have degenerate or indefinite information "
            f"({n_degenerate} empty/singular, {n_regularized} regularized)"
        )
    C = total / B**2
    C = 0.5 * (C + C.T)
    return C, {"n_degenerate": n_degenerate, "n_regularized": n_regularized}


def _diagnostics(per_block) -> dict:
    return {
        "n_blocks": len(per_block),
        "n_unconverged": int(sum(not b.converged for b in per_block)),
        "n_boundary": int(sum(any(b.on_boundary) for b in per_block)),
        "n_events": int(sum(b.n_events for b in per_block)),
    }


def aggregate(per_block: list, correction: Optional[np.ndarray] = None, method: str = "naive") -> IntegratedEstimate:
    thetas = np.array([b.theta for b in per_block])
    if correction is not None:
        thetas = thetas - correction
    C, vdiag = variance_hat(per_block)
    diag = _diagnostics(per_block)
    diag.update(vdiag)
    return IntegratedEstimate(thetas.mean(axis=0), C, list(per_block), method, None, correction, diag)


def estimate_naive(events: EventSequence, partition: BlockPartition, box: ParamBox = DEFAULT_BOX,
                   warm: bool = True) -> IntegratedEstimate:
    """Average of the block-local MLEs (observable n*theta scale)."""
    return aggregate(fit_blocks(events, partition, box, warm), method="naive")


def studentize(estimate: IntegratedEstimate, truth) -> np.ndarray:
    d = np.diag(estimate.C_hat)
    if np.any(d <= 0):
        raise EstimationError(f"non-positive variance diagonal {d}")
    z = (np.asarray(estimate.theta_bar) - np.asarray(truth, dtype=float)) / np.sqrt(d)
    estimate.z = z
    return z


# ---------------------------------------------------------------------------
# seasonal-baseline competitor


@dataclass(frozen=True)
class CHFit:
    params: CHParams
    loglik: float
    cov: np.ndarray  # (5, 5) in (b1, b2, b3, a, b)
    converged: bool

    @property
    def summary(self) -> np.ndarray:
        return self.params.summary().as_array()


def _ch_objective(y, times, T):
    b1, b2, b3, la, lb = y
    a, b = math.exp(la), math.exp(lb)
    ll, g, H, ok = ch_loglik_full(times, T, b1, b2, b3, a, b)
    if not ok:
        return np.inf, np.zeros(5), np.eye(5)
    s = np.array([1.0, 1.0, 1.0, a, b])
    gy = g * s
    Hy = H * np.outer(s, s)
    Hy[3, 3] += g[3] * a
    Hy[4, 4] += g[4] * b
    return -ll, -gy, -Hy


def fit_ch(events: EventSequence, T: Optional[float] = None, n_starts: int = 3) -> CHFit:
    """MLE of the seasonal-baseline Hawkes model with constant (a, b)."""
    T = events.horizon if T is None else float(T)
    times = events.times
    n = times.size
    if n < 10:
        raise EstimationError("too few events for the seasonal-baseline fit")
    # starts: seasonal fit to binned rates at branching 1/2, plus a flat baseline
    bins = 10
    counts, edges = np.histogram(times, bins=bins, range=(0, T))
    mids = 0.5 * (edges[1:] + edges[:-1]) / T
    rates = 0.5 * counts / (T / bins)
    starts = []
    try:
        sf = fit_seasonal(list(zip(mids, np.maximum(rates, 1e-3))))
        starts.append(np.array([*sf.beta, math.log(15.0), math.log(30.0)]))
    except Exception:
        pass
    flat = math.log(0.5 * n / T)
    starts.append(np.array([flat, -3.0, -3.0, math.log(15.0), math.log(30.0)]))
    starts.append(np.array([flat - 0.3, -1.0, -1.0, math.log(5.0), math.log(20.0)]))
    best = None
    cache = {}

    def fun(y):
        key = y.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = _ch_objective(y, times, T)
        return cache[key]

    for y0 in starts[:max(n_starts, 1)]:
        res = optimize.minimize(
            lambda y: fun(y)[0], y0, jac=lambda y: fun(y)[1], hess=lambda y: fun(y)[2],
            method="trust-exact", options={"gtol": 1e-8 * max(1.0, abs(fun(y0)[0])), "maxiter": 500},
        )
        if best is None or res.fun < best.fun:
            best = res
    y = best.x
    params = CHParams((float(y[0]), float(y[1]), float(y[2])), math.exp(y[3]), math.exp(y[4]))
    ll, g, H, ok = ch_loglik_full(times, T, *params.as_array())
    try:
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        cov = np.full((5, 5), np.nan)
    return CHFit(params, float(ll), cov, bool(best.success))


# ---------------------------------------------------------------------------
# intraday seasonal curve


@dataclass(frozen=True)
class SeasonalFit:
    beta: tuple
    residual_ss: float
    converged: bool
    degenerate: bool
    cov: Optional[np.ndarray] = None  # s^2 (J'J)^{-1}; None with fewer than 4 points of residual freedom


def fit_seasonal(points, T: float = 1.0) -> SeasonalFit:
    """Least-squares fit of exp(b1) + (e^b3 x - e^b2 (1 - x))^2, x = t/T, to (t, value) pairs."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 4:
        raise ValueError("need at least 4 (t, value) points")
    x = pts[:, 0] / T
    y = pts[:, 1]

    def resid(beta):
        return seasonal_curve(x, beta) - y

    def jac(beta):
        b1, b2, b3 = beta
        p, q = math.exp(b2), math.exp(b3)
        lin = q * x - p * (1 - x)
        return np.column_stack([np.full_like(x, math.exp(b1)), -2 * lin * p * (1 - x), 2 * lin * q * x])

    ymin = max(float(y.min()), 1e-8)
    best = None
    for sp in (-2.0, -0.5, 0.5):
        for sq in (-2.0, -0.5, 0.5):
            b0 = np.array([math.log(ymin) - 0.1, sp, sq])
            res = optimize.least_squares(resid, b0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                         max_nfev=5000)
            if best is None or res.cost < best.cost:
                best = res
    beta = tuple(float(v) for v in best.x)
    # a vanishing quadratic part means flat data, which the curve only reaches in the limit
    amp = max(math.exp(beta[1]), math.exp(beta[2])) ** 2
    degenerate = bool(amp < 1e-6 * max(abs(float(y.mean())), 1e-300))
    rss = float(2 * best.cost)
    cov = None
    if x.size > 3:
        try:
            cov = rss / (x.size - 3) * np.linalg.inv(best.jac.T @ best.jac)
        except np.linalg.LinAlgError:
            cov = None
    return SeasonalFit(beta, rss, bool(best.success), degenerate, cov)


# ---------------------------------------------------------------------------
# Cox toy model with rate n sqrt(theta)


class CoxEstimate(NamedTuple):
    theta_hat: float
    bias: float


def cox_bias(theta: float, nT: float) -> float:
    """First-order (here exact) bias of the squared-rate MLE."""
    return math.sqrt(theta) / nT


def cox_mle(count: int, nT: float) -> CoxEstimate:
    if nT <= 0:
        raise ValueError("nT must be positive")
    th = (count / nT) ** 2
    return CoxEstimate(th, cox_bias(th, nT))
