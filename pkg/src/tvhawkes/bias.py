"""First-order bias of the block MLE: Monte-Carlo tables and the long-run tensor formula.

Table values are mean(theta_hat - theta) for parametric Hawkes paths of length
Delta on the observable scale, so a table already carries the 1/Delta factor.
The analytic route estimates the long-run tensors (Gamma, K, C, Q) and gives
bias ~ b(theta) / Delta.

Subtracting b(theta_hat) leaves a plug-in error E b(theta_hat) - b(theta),
driven by the curvature of b and the spread of theta_hat. A table can also hold
c(theta) = E_theta b(theta_hat), computed from the same simulated fits; lookups
then return the iterated correction 2b - c, whose plug-in error is of higher order.
"""
from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from . import rng as rngmod
from .estimate import IntegratedEstimate, _multistart, aggregate, fit_blocks, moment_start
from .likelihood import hawkes_loglik_full
from .model import DEFAULT_BOX, BlockPartition, EventSequence, HawkesParams, ParamBox, _as_theta
from .simulate import sim_const_hawkes

TABLE_FORMAT = "tvhawkes.bias_table"
TABLE_VERSION = 1

DEFAULT_NU = (0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6)
DEFAULT_A = (5.0, 8.0, 11.0, 14.0, 17.0)
DEFAULT_B = (20.0, 27.5, 35.0, 42.5, 50.0)
DEFAULT_DELTAS = (108.0, 216.0, 432.0)
FAIL_LIMIT = 0.20


class BiasLookupError(ValueError):
    pass


class LookupWarning(UserWarning):
    pass


@dataclass
class BiasTable:
    nu: np.ndarray
    a: np.ndarray
    b: np.ndarray
    deltas: np.ndarray
    values: np.ndarray  # (D, Nnu, Na, Nb, 3)
    se: np.ndarray  # same shape, MC standard errors
    valid: np.ndarray  # (D, Nnu, Na, Nb)
    mc_paths: int
    seed: int
    box: ParamBox = DEFAULT_BOX
    fixed: tuple = (None, None, None)
    n_ok: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)
    plugin: Optional[np.ndarray] = None  # c = E_theta b(theta_hat), same shape as values

    def __post_init__(self):
        self.nu, self.a, self.b, self.deltas = (np.asarray(v, dtype=float) for v in
                                                (self.nu, self.a, self.b, self.deltas))
        for name, g in (("nu", self.nu), ("a", self.a), ("b", self.b), ("deltas", self.deltas)):
            if g.ndim != 1 or g.size == 0 or np.any(np.diff(g) <= 0):
                raise ValueError(f"{name} grid must be nonempty and strictly increasing")
        shape = (self.deltas.size, self.nu.size, self.a.size, self.b.size)
        self.values = np.asarray(self.values, dtype=float).reshape(shape + (3,))
        self.se = np.asarray(self.se, dtype=float).reshape(shape + (3,))
        self.valid = np.asarray(self.valid, dtype=bool).reshape(shape)
        if not np.all(np.isfinite(self.values[self.valid])):
            raise ValueError("valid table cells must be finite")
        if self.plugin is not None:
            self.plugin = np.asarray(self.plugin, dtype=float).reshape(shape + (3,))

    @property
    def iterated(self) -> bool:
        return self.plugin is not None

    def _surface(self, iterated: bool):
        """Tabulated correction and its validity mask."""
        if iterated and self.plugin is not None:
            ok = self.valid & np.all(np.isfinite(self.plugin), axis=-1)
            return 2.0 * self.values - self.plugin, ok
        return self.values, self.valid

    @property
    def axes(self):
        return (self.nu, self.a, self.b)

    @classmethod
    def zeros(cls, nu=DEFAULT_NU, a=DEFAULT_A, b=DEFAULT_B, deltas=DEFAULT_DELTAS) -> "BiasTable":
        shape = (len(deltas), len(nu), len(a), len(b))
        return cls(nu, a, b, deltas, np.zeros(shape + (3,)), np.zeros(shape + (3,)), np.ones(shape, bool), 0, 0)

    def lookup(self, theta, delta: float, iterated: bool = True):
        """(correction vector, clamped flag) at (theta, delta).

        Returns 2b - c when the table holds c and ``iterated`` is set, else b.
        """
        surf, valid = self._surface(iterated)
        th = _as_theta(theta)
        if not delta > 0:
            raise ValueError("block length must be positive")
        clamped = False
        corners = []
        for k, g in enumerate(self.axes):
            x = th[k]
            if x < g[0] or x > g[-1]:
                clamped = True
                x = min(max(x, g[0]), g[-1])
            if g.size == 1:
                corners.append(((0, 1.0),))
                continue
            j = int(np.clip(np.searchsorted(g, x, side="right") - 1, 0, g.size - 2))
            w = (x - g[j]) / (g[j + 1] - g[j])
            corners.append(((j, 1.0 - w), (j + 1, w)))
        # 1/delta coordinate, increasing order of u
        u = 1.0 / delta
        us = 1.0 / self.deltas[::-1]
        order = np.arange(self.deltas.size)[::-1]
        if u < us[0] or u > us[-1]:
            # outside the block-length range: scale the nearest knot by the leading 1/Delta law
            clamped = True
            k = 0 if u < us[0] else us.size - 1
            dterms = ((order[k], u / us[k]),)
        elif us.size == 1:
            dterms = ((order[0], 1.0),)
        else:
            j = int(np.clip(np.searchsorted(us, u, side="right") - 1, 0, us.size - 2))
            w = (u - us[j]) / (us[j + 1] - us[j])
            dterms = ((order[j], 1.0 - w), (order[j + 1], w))
        out = np.zeros(3)
        for di, wd in dterms:
            for i, wi in corners[0]:
                for j, wj in corners[1]:
                    for k, wk in corners[2]:
                        w = wd * wi * wj * wk
                        if w == 0.0:
                            continue
                        if not valid[di, i, j, k]:
                            raise BiasLookupError(
                                f"invalid table cell (delta={self.deltas[di]}, nu={self.nu[i]}, "
                                f"a={self.a[j]}, b={self.b[k]}) in the interpolation neighbourhood")
                        out += w * surf[di, i, j, k]
        return out, clamped

    def lookup_knot(self, thetas, di: int, iterated: bool = False):
        """Vectorized lookup at block-length knot di for the rows of thetas (clamped to the grid).

        Returns (values (n, 3), usable mask); rows touching an invalid cell are not usable.
        """
        surf, valid = self._surface(iterated)
        th = np.atleast_2d(np.asarray(thetas, dtype=float))
        n = th.shape[0]
        idx, wts = [], []
        for k, g in enumerate(self.axes):
            x = np.clip(th[:, k], g[0], g[-1])
            if g.size == 1:
                idx.append((np.zeros(n, int), np.zeros(n, int)))
                wts.append((np.ones(n), np.zeros(n)))
                continue
            j = np.clip(np.searchsorted(g, x, side="right") - 1, 0, g.size - 2)
            w = (x - g[j]) / (g[j + 1] - g[j])
            idx.append((j, j + 1))
            wts.append((1.0 - w, w))
        out = np.zeros((n, 3))
        usable = np.ones(n, bool)
        for ci in range(2):
            for cj in range(2):
                for ck in range(2):
                    w = wts[0][ci] * wts[1][cj] * wts[2][ck]
                    used = w != 0.0
                    ok = valid[di, idx[0][ci], idx[1][cj], idx[2][ck]]
                    usable &= ok | ~used
                    v = surf[di, idx[0][ci], idx[1][cj], idx[2][ck]]
                    out += np.where((used & ok)[:, None], w[:, None] * v, 0.0)
        return out, usable

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": TABLE_FORMAT,
            "version": TABLE_VERSION,
            "grid": {"nu": self.nu.tolist(), "a": self.a.tolist(), "b": self.b.tolist()},
            "deltas": self.deltas.tolist(),
            "mc_paths": int(self.mc_paths),
            "seed": int(self.seed),
            "box": self.box.to_dict(),
            "fixed": list(self.fixed),
            "values": self.values.tolist(),
            "se": self.se.tolist(),
            "valid": self.valid.tolist(),
            "n_ok": None if self.n_ok is None else np.asarray(self.n_ok).tolist(),
            "meta": self.meta,
            "plugin": None if self.plugin is None else self.plugin.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BiasTable":
        if d.get("format") != TABLE_FORMAT:
            raise ValueError("not a bias table file")
        if int(d.get("version", -1)) != TABLE_VERSION:
            raise ValueError(f"unsupported bias table version {d.get('version')}")
        g = d["grid"]
        return cls(g["nu"], g["a"], g["b"], d["deltas"], np.array(d["values"]), np.array(d["se"]),
                   np.array(d["valid"]), int(d["mc_paths"]), int(d["seed"]), ParamBox.from_dict(d["box"]),
                   tuple(d.get("fixed", (None, None, None))),
                   None if d.get("n_ok") is None else np.array(d["n_ok"]), d.get("meta", {}),
                   None if d.get("plugin") is None else np.array(d["plugin"], dtype=float))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "BiasTable":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def bias_lookup(table: BiasTable, theta, delta: float) -> np.ndarray:
    """Interpolated bias; warns (LookupWarning) when (theta, delta) is clamped to the table hull."""
    out, clamped = table.lookup(theta, delta)
    if clamped:
        warnings.warn(f"bias lookup outside the table hull at theta={tuple(_as_theta(theta))}, "
                      f"delta={delta}; clamped", LookupWarning, stacklevel=2)
    return out


# ---------------------------------------------------------------------------
# table construction


@njit(cache=True)
def _cell_draws(gen, nu, a, b, L, n_paths, lo, hi, free, fixed, tol, maxit, max_events):
    """Per-path theta_hat - theta and the score at theta; rows of failed fits are flagged in ok."""
    err = np.zeros((n_paths, 3))
    score = np.zeros((n_paths, 3))
    ok = np.zeros(n_paths, dtype=np.bool_)
    truth = np.array([nu, a, b])
    poisson = (not free[1]) and fixed[1] == 0.0
    starts = np.empty((2, 3))
    for p in range(n_paths):
        times, status = sim_const_hawkes(gen, nu, a, b, L, max_events)
        if status != 0:
            continue
        if poisson:
            err[p, 0] = times.size / L - nu
            score[p, 0] = times.size / nu - L
            ok[p] = True
            continue
        if times.size == 0:
            continue
        # moment seed and the true value; the box midpoint never wins in these cells
        starts[0] = moment_start(times, L, lo, hi)
        for k in range(3):
            starts[1, k] = min(max(math.log(truth[k]), lo[k]), hi[k])
        for k in range(3):
            if not free[k]:
                starts[:, k] = math.log(fixed[k])
        theta, ll, g, H, conv = _multistart(times, L, starts, lo, hi, free, fixed, tol, maxit)
        if not conv:
            continue
        err[p] = theta - truth
        g0 = hawkes_loglik_full(times, L, nu, a, b)[1]
        for k in range(3):
            if free[k]:
                score[p, k] = g0[k]
        ok[p] = True
    return err, score, ok


def control_variate_mean(err, score):
    """Mean of err adjusted by the zero-mean score at the truth; (mean, standard error).

    The regression coefficient is estimated from the same draws; the induced
    bias is O(1/n) and far below the standard error.
    """
    n = err.shape[0]
    keep = np.any(score != 0.0, axis=0)
    s = score[:, keep]
    if n < 3 or s.shape[1] == 0:
        m = err.mean(axis=0)
        return m, err.std(axis=0, ddof=1) / math.sqrt(max(n, 1)) if n > 1 else np.full(3, np.nan)
    sc = s - s.mean(axis=0)
    beta = np.linalg.lstsq(sc, err - err.mean(axis=0), rcond=None)[0]
    adj = err - s @ beta
    resid = adj - adj.mean(axis=0)
    dof = max(n - 1 - s.shape[1], 1)
    return adj.mean(axis=0), np.sqrt((resid ** 2).sum(axis=0) / dof / n)


def _run_cell(args):
    seed, index, theta, L, n_paths, lo, hi, free, fixed, cv, keep = args
    gen = rngmod.stream(seed, 3, index)
    err, score, ok = _cell_draws(gen, theta[0], theta[1], theta[2], L, n_paths, lo, hi, free, fixed,
                                 1e-8, 200, 10_000_000)
    n_ok = int(ok.sum())
    draws = (err[ok] + theta, score[ok]) if keep else None
    if n_ok == 0:
        return index, np.full(3, np.nan), np.full(3, np.nan), 0, n_paths, draws
    if cv:
        m, se = control_variate_mean(err[ok], score[ok])
    else:
        e = err[ok]
        m = e.mean(axis=0)
        se = e.std(axis=0, ddof=1) / math.sqrt(n_ok) if n_ok > 1 else np.full(3, np.nan)
    return index, m, se, n_ok, n_paths - n_ok, draws


def build_bias_table(
    box: ParamBox = DEFAULT_BOX,
    nu: Sequence[float] = DEFAULT_NU,
    a: Sequence[float] = DEFAULT_A,
    b: Sequence[float] = DEFAULT_B,
    deltas: Sequence[float] = DEFAULT_DELTAS,
    mc_paths: int = 5000,
    seed: int = 0,
    fixed=None,
    workers: int = 1,
    progress=None,
    control_variate: bool = True,
    iterated: bool = True,
) -> BiasTable:
    """Monte-Carlo table of mean(theta_hat - theta) over parametric paths on [0, Delta].

    With ``control_variate`` the cell mean is regression-adjusted by the score at
    the true theta, which has mean zero and carries the first-order noise of
    theta_hat; the expectation is unchanged and the MC error drops severalfold.
    With ``iterated`` the same fits also give c(theta) = E_theta b(theta_hat),
    the mean of the finished table looked up at each simulated theta_hat.
    """
    from .estimate import _fixed_arrays

    if mc_paths < 100:
        raise ValueError("mc_paths must be at least 100")
    free, vals = _fixed_arrays(fixed)
    grid = [np.asarray(g, dtype=float) for g in (nu, a, b)]
    if not free[1]:
        grid[1] = np.array([vals[1]])
    deltas = np.asarray(deltas, dtype=float)
    lo, hi = np.log(box.lo), np.log(box.hi)
    fixed_arr = np.where(free, 0.0, vals)
    jobs = []
    index = 0
    for L in deltas:
        for x in grid[0]:
            for y in grid[1]:
                for z in grid[2]:
                    theta = np.where(free, [x, y, z], vals)
                    jobs.append((int(seed), index, theta, float(L), int(mc_paths), lo, hi, free, fixed_arr,
                                 bool(control_variate), bool(iterated)))
                    index += 1
    results = [None] * len(jobs)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_run_cell, jobs, chunksize=max(1, len(jobs) // (8 * workers))):
                results[res[0]] = res
                if progress:
                    progress(res[0], len(jobs))
    else:
        for job in jobs:
            res = _run_cell(job)
            results[res[0]] = res
            if progress:
                progress(res[0], len(jobs))
    shape = (deltas.size, grid[0].size, grid[1].size, grid[2].size)
    values = np.zeros(shape + (3,))
    se = np.zeros(shape + (3,))
    valid = np.zeros(shape, bool)
    n_ok = np.zeros(shape, int)
    for idx, m, sd, ok, fail, _ in results:
        cell = np.unravel_index(idx, shape)
        n_ok[cell] = ok
        if ok == 0 or fail > FAIL_LIMIT * (ok + fail):
            values[cell] = np.nan
            se[cell] = np.nan
            continue
        values[cell] = m
        se[cell] = sd
        valid[cell] = True
    fixed_names = tuple(None if f else float(v) for f, v in zip(free, vals))
    table = BiasTable(grid[0], grid[1], grid[2], deltas, values, se, valid, int(mc_paths), int(seed), box,
                      fixed_names, n_ok, {"control_variate": bool(control_variate), "iterated": bool(iterated)})
    if iterated:
        table.plugin = _plugin_means(table, results, shape, control_variate)
    return table


def _plugin_means(table: BiasTable, results, shape, cv: bool) -> np.ndarray:
    """c(theta) = E_theta b(theta_hat) per cell from the stored fits; NaN where unusable."""
    plugin = np.full(shape + (3,), np.nan)
    for idx, _, _, _, _, draws in results:
        cell = np.unravel_index(idx, shape)
        if not table.valid[cell] or draws is None:
            continue
        thetas, score = draws
        g, usable = table.lookup_knot(thetas, cell[0])
        if usable.sum() < max(3, (1.0 - FAIL_LIMIT) * usable.size):
            continue
        if cv:
            plugin[cell] = control_variate_mean(g[usable], score[usable])[0]
        else:
            plugin[cell] = g[usable].mean(axis=0)
    return plugin


# ---------------------------------------------------------------------------
# bias-corrected estimator


def estimate_bc(events: EventSequence, partition: BlockPartition, box: ParamBox = DEFAULT_BOX,
                table: BiasTable = None, warm: bool = True) -> IntegratedEstimate:
    """Average of block MLEs each corrected by the tabulated bias at (theta_hat, block length)."""
    if table is None:
        raise ValueError("a bias table is required")
    per_block = fit_blocks(events, partition, box, warm)
    return correct_blocks(per_block, table)


def correct_blocks(per_block, table: BiasTable, method: str = "bc") -> IntegratedEstimate:
    corr = np.zeros((len(per_block), 3))
    n_clamped = 0
    for i, be in enumerate(per_block):
        if be.degenerate:
            continue
        corr[i], clamped = table.lookup(be.theta, be.block[1] - be.block[0])
        n_clamped += clamped
    est = aggregate(per_block, corr, method)
    est.diagnostics["n_clamped"] = int(n_clamped)
    return est


# ---------------------------------------------------------------------------
# long-run tensors


@dataclass(frozen=True)
class AsymptoticTensors:
    gamma: np.ndarray  # (3, 3)
    K: np.ndarray  # (3, 3, 3), K[j, l, m]
    C: np.ndarray  # (3, 3, 3), C[k, l, m] = C_{k,lm}
    Q: np.ndarray  # (3, 3, 3), Q[k, l, m] = Q_{k,lm}
    horizon_used: float
    free: tuple = (True, True, True)
    se: Optional[dict] = None


def bias_from_tensors(t: AsymptoticTensors) -> np.ndarray:
    """b_k = 1/2 G^{jk} G^{lm} (K_jlm + 2 (C_{l,jm} + Q_{l,jm})) over the free coordinates."""
    free = np.array(t.free, dtype=bool)
    idx = np.nonzero(free)[0]
    G = t.gamma[np.ix_(idx, idx)]
    Gi = np.linalg.inv(G)
    K = t.K[np.ix_(idx, idx, idx)]
    CQ = (t.C + t.Q)[np.ix_(idx, idx, idx)]
    # CQ[l, j, m] enters as the (j, l, m) term
    T = K + 2.0 * np.transpose(CQ, (1, 0, 2))
    out = np.zeros(3)
    out[idx] = 0.5 * np.einsum("jk,lm,jlm->k", Gi, Gi, T)
    return out


_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)


@njit(cache=True)
def _path_integrals(times, T, nu, a, b, rho, glx, glw):
    """Time integrals along one path at the true parameter.

    Returns F = int dl dl' / lam, Cint[k,l,m] = int dlam_k d2 log lam_lm,
    YF[k,l,m] = int Y_k f_lm, Yint[k] = int Y_k, where Y is the score
    martingale discounted at rate rho.
    """
    F = np.zeros((3, 3))
    Cint = np.zeros((3, 3, 3))
    YF = np.zeros((3, 3, 3))
    Yint = np.zeros(3)
    A = 0.0
    B = 0.0
    Cc = 0.0
    Y = np.zeros(3)
    dl = np.zeros(3)
    d2 = np.zeros((3, 3))
    Yn = np.zeros(3)
    prev = 0.0
    piece = 1.0 / b
    s_max = 30.0 / b
    c = b - rho
    n = times.size
    for i in range(n + 1):
        end = times[i] if i < n else T
        gap = end - prev
        # integrate over (prev, end) in pieces of length 1/b, far tail as constant state
        s0 = 0.0
        while s0 < gap:
            s1 = min(s0 + piece, gap)
            if s0 >= s_max:
                s1 = gap
            h = s1 - s0
            for q in range(glx.size):
                s = s0 + 0.5 * h * (glx[q] + 1.0)
                w = 0.5 * h * glw[q]
                e = math.exp(-b * s)
                As = A * e
                Bs = (B + s * A) * e
                Cs = (Cc + 2.0 * s * B + s * s * A) * e
                lam = nu + a * As
                dl[0] = 1.0
                dl[1] = As
                dl[2] = -a * Bs
                d2[:, :] = 0.0
                d2[1, 2] = -Bs
                d2[2, 1] = -Bs
                d2[2, 2] = a * Cs
                # Y(s) = e^{-rho s} Y0 - int_0^s e^{-rho (s-r)} dlam(r) dr
                er = math.exp(-rho * s)
                ec = math.exp(-c * s)
                i0 = (1.0 - er) / rho
                j0 = (1.0 - ec) / c
                j1 = (1.0 - ec * (1.0 + c * s)) / (c * c)
                Yn[0] = er * Y[0] - i0
                Yn[1] = er * Y[1] - er * A * j0
                Yn[2] = er * Y[2] + a * er * (B * j0 + A * j1)
                for l in range(3):
                    for m in range(3):
                        f = dl[l] * dl[m] / lam
                        F[l, m] += w * f
                        d2log = d2[l, m] / lam - dl[l] * dl[m] / (lam * lam)
                        for k in range(3):
                            Cint[k, l, m] += w * dl[k] * d2log
                            YF[k, l, m] += w * Yn[k] * f
                for k in range(3):
                    Yint[k] += w * Yn[k]
            s0 = s1
        # advance the state to the end of the gap
        e = math.exp(-b * gap)
        er = math.exp(-rho * gap)
        ec = math.exp(-c * gap)
        j0 = (1.0 - ec) / c
        j1 = (1.0 - ec * (1.0 + c * gap)) / (c * c)
        Y[0] = er * Y[0] - (1.0 - er) / rho
        Y[2] = er * Y[2] + a * er * (B * j0 + A * j1)
        Y[1] = er * Y[1] - er * A * j0
        Cc = (Cc + 2.0 * gap * B + gap * gap * A) * e
        B = (B + gap * A) * e
        A = A * e
        if i < n:
            lam = nu + a * A
            Y[0] += 1.0 / lam
            Y[1] += A / lam
            Y[2] += -a * B / lam
            A += 1.0
        prev = end
    return F, Cint, YF, Yint


def _path_tensors(times, T, theta, rho, fd_rel=1e-4):
    nu, a, b = theta
    ll, g, H, ok = hawkes_loglik_full(times, T, nu, a, b)
    gamma = -H / T
    K = np.zeros((3, 3, 3))
    for j in range(3):
        def d(hj):
            tp = np.array(theta, dtype=float)
            tm = tp.copy()
            tp[j] += hj
            tm[j] -= hj
            Hp = hawkes_loglik_full(times, T, *tp)[2]
            Hm = hawkes_loglik_full(times, T, *tm)[2]
            return (Hp - Hm) / (2 * hj)

        h = fd_rel * max(abs(theta[j]), 1e-8)
        K[j] = (4 * d(h / 2) - d(h)) / 3 / T
    Q_parts = {}
    for r in (rho, 2 * rho):
        F, Cint, YF, Yint = _path_integrals(times, T, nu, a, b, r, _GL_X, _GL_W)
        fbar = F / T
        Q_parts[r] = -(YF - np.einsum("k,lm->klm", Yint, fbar)) / T
    # Richardson in the discount rate removes its first-order effect
    Q = 2 * Q_parts[rho] - Q_parts[2 * rho]
    return gamma, K, Cint / T, Q


def estimate_tensors(theta, horizon: float = 20_000.0, mc_paths: int = 10, seed: int = 0,
                     rho: Optional[float] = None, free=(True, True, True)) -> AsymptoticTensors:
    """Long-run tensors at theta from mc_paths parametric paths of the given horizon.

    ``free`` restricts the parameter set (e.g. (True, False, False) for the Poisson case).
    """
    th = _as_theta(theta)
    nu, a, b = th
    if not (nu > 0 and b > 0 and a >= 0 and a < b):
        raise ValueError(f"need a stationary parameter (a/b < 1), got {tuple(th)}")
    if horizon * (b - a) < 100:
        raise ValueError("horizon too short relative to the cluster time scale 1/(b-a)")
    if rho is None:
        rho = (b - a) / 20.0
    parts = []
    for p in range(mc_paths):
        gen = rngmod.stream(seed, 4, p)
        times, status = sim_const_hawkes(gen, nu, a, b, float(horizon), 50_000_000)
        if status:
            raise RuntimeError("simulation overflow while estimating tensors")
        parts.append(_path_tensors(times, float(horizon), th, rho))
    stacked = [np.array(x) for x in zip(*parts)]
    means = [x.mean(axis=0) for x in stacked]
    ses = [x.std(axis=0, ddof=1) / math.sqrt(mc_paths) if mc_paths > 1 else np.full(x.shape[1:], np.nan)
           for x in stacked]
    gamma, K, C, Q = means
    gamma = 0.5 * (gamma + gamma.T)
    fr = np.array(free, dtype=bool)
    sub = gamma[np.ix_(fr, fr)]
    if np.linalg.eigvalsh(sub).min() <= 0:
        raise np.linalg.LinAlgError("estimated Fisher information is not positive definite")
    return AsymptoticTensors(gamma, K, C, Q, float(horizon) * mc_paths, tuple(bool(f) for f in free),
                             {"gamma": ses[0], "K": ses[1], "C": ses[2], "Q": ses[3]})
