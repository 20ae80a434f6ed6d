"""Domain types for exponential-kernel Hawkes processes with time-varying parameters.

Parameters are always on the observable scale (events per second), i.e. the
product ``n * theta`` in the asymptotic framing; ``n_scale`` only enters when a
caller explicitly asks for the scaled process.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


class DomainError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class EventParseError(ValueError):
    pass


PARAM_NAMES = ("nu", "a", "b")


@dataclass(frozen=True)
class HawkesParams:
    nu: float
    a: float
    b: float

    def __post_init__(self):
        vals = (self.nu, self.a, self.b)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError(f"non-finite Hawkes parameters {vals}")
        if self.nu < 0 or self.a < 0 or self.b <= 0:
            raise DomainError(f"need nu >= 0, a >= 0, b > 0; got {vals}")

    def __iter__(self):
        return iter((self.nu, self.a, self.b))

    def as_array(self) -> np.ndarray:
        return np.array([self.nu, self.a, self.b], dtype=float)

    @classmethod
    def from_array(cls, x) -> "HawkesParams":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), float(x[1]), float(x[2]))

    @property
    def branching_ratio(self) -> float:
        return self.a / self.b


def _as_theta(params) -> np.ndarray:
    if isinstance(params, HawkesParams):
        return params.as_array()
    return np.asarray(params, dtype=float).reshape(3)


@dataclass(frozen=True)
class ParamBox:
    lower: HawkesParams
    upper: HawkesParams
    require_subcritical: bool = False

    def __post_init__(self):
        for name in ("lower", "upper"):
            v = getattr(self, name)
            if not isinstance(v, HawkesParams):
                object.__setattr__(self, name, HawkesParams.from_array(_as_theta(v)))
        lo, hi = self.lower.as_array(), self.upper.as_array()
        if np.any(lo <= 0):
            raise ConfigError("box lower bounds must be strictly positive")
        if np.any(lo > hi):
            raise ConfigError("box lower bound exceeds upper bound")
        if self.require_subcritical and not self.upper.a < self.lower.b:
            raise ConfigError("upper a must be below lower b for a subcritical box")

    @property
    def lo(self) -> np.ndarray:
        return self.lower.as_array()

    @property
    def hi(self) -> np.ndarray:
        return self.upper.as_array()

    def contains(self, theta) -> bool:
        x = _as_theta(theta)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def project(self, theta) -> np.ndarray:
        return np.clip(_as_theta(theta), self.lo, self.hi)

    def to_dict(self) -> dict:
        return {"lower": list(self.lo), "upper": list(self.hi)}

    @classmethod
    def from_dict(cls, d) -> "ParamBox":
        return cls(HawkesParams.from_array(d["lower"]), HawkesParams.from_array(d["upper"]))


# Wide enough for every Model I-IV trajectory plus block-estimate scatter.
DEFAULT_BOX = ParamBox(HawkesParams(0.05, 0.5, 2.0), HawkesParams(5.0, 60.0, 150.0))


@dataclass(frozen=True)
class EventSequence:
    """Strictly increasing event times on (0, horizon]."""

    times: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=float).reshape(-1)
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        if t.size:
            if t[0] <= 0:
                raise DomainError("events must be strictly after time 0")
            if t[-1] > self.horizon:
                raise DomainError("event after the horizon")
            if np.any(np.diff(t) <= 0):
                raise DomainError("event times must be strictly increasing")

    def __len__(self):
        return self.times.size

    def restrict(self, start: float, end: float) -> "EventSequence":
        """Events in (start, end], shifted so the window starts at 0."""
        t = self.times
        lo = np.searchsorted(t, start, side="right")
        hi = np.searchsorted(t, end, side="right")
        return EventSequence(t[lo:hi] - start, end - start)


def _times_of(events) -> np.ndarray:
    if isinstance(events, EventSequence):
        return events.times
    return np.asarray(events, dtype=float).reshape(-1)


def intensity_at(params, events, t: float) -> float:
    """Left-continuous intensity nu + sum_{t_i < t} a exp(-b (t - t_i))."""
    nu, a, b = _as_theta(params)
    times = _times_of(events)
    if isinstance(events, EventSequence) and not (0 <= t <= events.horizon):
        raise DomainError(f"t={t} outside [0, {events.horizon}]")
    if t < 0:
        raise DomainError(f"negative time {t}")
    past = times[times < t]
    return float(nu + a * np.exp(-b * (t - past)).sum())


def compensator(params, events, t0: float, t1: float) -> float:
    """Integrated intensity over [t0, t1]."""
    if t0 > t1:
        raise DomainError(f"t0={t0} > t1={t1}")
    if t0 < 0 or (isinstance(events, EventSequence) and t1 > events.horizon):
        raise DomainError(f"[{t0}, {t1}] outside the observation window")
    nu, a, b = _as_theta(params)
    times = _times_of(events)
    past = times[times < t1]
    start = np.maximum(t0, past)
    excit = np.exp(-b * (start - past)) - np.exp(-b * (t1 - past))
    return float(nu * (t1 - t0) + (a / b) * excit.sum())


# ---------------------------------------------------------------------------
# parameter paths

PATH_KINDS = (
    "constant",
    "linear",
    "cosine",
    "quadratic_seasonal",
    "seasonal_smoothed_bm",
    "smoothed_bm",
)
STOCHASTIC_KINDS = ("seasonal_smoothed_bm", "smoothed_bm")


def seasonal_curve(x, beta) -> np.ndarray:
    """exp(b1) + (exp(b2)+exp(b3))^2 (x - exp(b2)/(exp(b2)+exp(b3)))^2 for x = t/T."""
    b1, b2, b3 = beta
    p, q = math.exp(b2), math.exp(b3)
    s = p + q
    x = np.asarray(x, dtype=float)
    return math.exp(b1) + s * s * (x - p / s) ** 2


def seasonal_mean(beta) -> float:
    """Average of seasonal_curve over x in [0, 1]."""
    b1, b2, b3 = beta
    p, q = math.exp(b2), math.exp(b3)
    return math.exp(b1) + (p * p - p * q + q * q) / 3.0


@dataclass(frozen=True)
class ParamPath:
    """Deterministic trend plus an optional smoothed-Brownian nuisance term.

    ``betas[k]`` (when not None) replaces component k of ``theta_m`` by the
    seasonal curve. ``sigma`` scales ``(1/tau) int_{t-tau}^t W_s ds``.
    """

    kind: str
    T: float
    theta_m: tuple = (0.8, 11.0, 30.0)
    amplitude: tuple = (0.0, 0.0, 0.0)
    betas: tuple = (None, None, None)
    sigma: tuple = (0.0, 0.0, 0.0)
    tau: float = 1.0
    nu_floor: Optional[float] = None
    box: Optional[ParamBox] = None

    def __post_init__(self):
        if self.kind not in PATH_KINDS:
            raise ConfigError(f"unknown path kind {self.kind!r}")
        if not self.T > 0:
            raise ConfigError("path horizon must be positive")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        object.__setattr__(self, "theta_m", tuple(float(v) for v in self.theta_m))
        object.__setattr__(self, "amplitude", tuple(float(v) for v in self.amplitude))
        object.__setattr__(self, "sigma", tuple(float(v) for v in self.sigma))
        object.__setattr__(
            self, "betas", tuple(None if b is None else tuple(float(v) for v in b) for b in self.betas)
        )

    @property
    def stochastic(self) -> bool:
        return self.kind in STOCHASTIC_KINDS and any(s != 0 for s in self.sigma)

    def trend(self, t) -> np.ndarray:
        """Deterministic part, shape (3, len(t))."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = t / self.T
        out = np.empty((3, t.size))
        for k in range(3):
            base = self.theta_m[k]
            if self.kind == "linear":
                out[k] = base + self.amplitude[k] * (-1.0 + 2.0 * x)
            elif self.kind == "cosine":
                out[k] = base + self.amplitude[k] * np.cos(2.0 * np.pi * x)
            elif self.kind in ("quadratic_seasonal", "seasonal_smoothed_bm") and self.betas[k] is not None:
                out[k] = seasonal_curve(x, self.betas[k])
            else:
                out[k] = base
        return out

    def clamp(self, theta: np.ndarray) -> np.ndarray:
        theta = np.array(theta, dtype=float, copy=True)
        if self.nu_floor is not None:
            theta[0] = np.maximum(theta[0], self.nu_floor)
        if self.box is not None:
            theta = np.clip(theta, self.box.lo[:, None], self.box.hi[:, None])
        return theta

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "T": self.T,
            "theta_m": list(self.theta_m),
            "amplitude": list(self.amplitude),
            "betas": [None if b is None else list(b) for b in self.betas],
            "sigma": list(self.sigma),
            "tau": self.tau,
            "nu_floor": self.nu_floor,
            "box": None if self.box is None else self.box.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamPath":
        d = dict(d)
        if d.get("box") is not None:
            d["box"] = ParamBox.from_dict(d["box"])
        if "betas" in d:
            d["betas"] = tuple(None if b is None else tuple(b) for b in d["betas"])
        return cls(**d)


def eval_param_path(path: ParamPath, t, noise_state=None) -> HawkesParams:
    """theta*_t for a scalar t; stochastic kinds need a realized noise state."""
    if not 0 <= t <= path.T:
        raise DomainError(f"t={t} outside [0, {path.T}]")
    if path.stochastic:
        if noise_state is None:
            raise StateError("stochastic path queried without a realized noise path")
        return HawkesParams.from_array(noise_state.theta_at(np.array([t]))[:, 0])
    return HawkesParams.from_array(path.clamp(path.trend([t]))[:, 0])


# Values of the simulation study in the observable (n * theta) scale.
THETA_M = (0.8, 11.0, 30.0)
MODEL_AMPLITUDE = (0.5, 4.0, 10.0)
BETA_NU = (-0.84, -0.26, -0.39)
BETA_A = (2.35, -0.05, 0.40)
BETA_B = (3.66, -0.33, 0.67)
STUDY_T = 21600.0


def constant_path(theta=THETA_M, T: float = STUDY_T) -> ParamPath:
    return ParamPath("constant", T, theta_m=tuple(theta))


def model_I(T: float = STUDY_T) -> ParamPath:
    return ParamPath("linear", T, theta_m=THETA_M, amplitude=MODEL_AMPLITUDE)


def model_II(T: float = STUDY_T) -> ParamPath:
    return ParamPath("cosine", T, theta_m=THETA_M, amplitude=MODEL_AMPLITUDE)


def model_III(T: float = STUDY_T) -> ParamPath:
    return ParamPath("quadratic_seasonal", T, theta_m=THETA_M, betas=(BETA_NU, None, None))


def model_IV(T: float = STUDY_T, box: Optional[ParamBox] = DEFAULT_BOX) -> ParamPath:
    sigma = tuple(v / (6.0 * math.sqrt(T)) for v in THETA_M)
    return ParamPath(
        "seasonal_smoothed_bm",
        T,
        theta_m=THETA_M,
        betas=(BETA_NU, BETA_A, BETA_B),
        sigma=sigma,
        tau=1.0,
        nu_floor=0.2,
        box=box,
    )


def smoothed_bm_path(theta=THETA_M, sigma=(0.0, 0.0, 0.0), tau: float = 1.0,
                     T: float = STUDY_T, box: Optional[ParamBox] = DEFAULT_BOX) -> ParamPath:
    return ParamPath("smoothed_bm", T, theta_m=tuple(theta), sigma=tuple(sigma), tau=tau, box=box)


MODELS = {
    "const": constant_path,
    "I": model_I,
    "II": model_II,
    "III": model_III,
    "IV": model_IV,
}


def model_path(name: str, T: float = STUDY_T) -> ParamPath:
    try:
        return MODELS[name](T=T)
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None


# ---------------------------------------------------------------------------
# block partitions


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class BlockPartition:
    n_scale: int
    h_n: int
    T: float
    n_blocks: int = field(init=False)
    delta: float = field(init=False)
    edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.T <= 0:
            raise ConfigError("T must be positive")
        if not 1 <= self.h_n <= self.n_scale:
            raise ConfigError(f"need 1 <= h_n <= n (h_n={self.h_n}, n={self.n_scale})")
        B = self.n_scale // self.h_n
        delta = self.T * self.h_n / self.n_scale
        edges = np.arange(B + 1, dtype=float) * delta
        edges[-1] = self.T
        edges.setflags(write=False)
        object.__setattr__(self, "n_blocks", B)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "edges", edges)

    @property
    def boundaries(self) -> list:
        return [(float(s), float(e)) for s, e in zip(self.edges[:-1], self.edges[1:])]

    def block_index(self, times) -> np.ndarray:
        """Block of each event; blocks are ((i-1)D, iD], boundary events go left."""
        idx = np.searchsorted(self.edges[1:], np.asarray(times, dtype=float), side="left")
        return np.minimum(idx, self.n_blocks - 1)

    def split(self, events: EventSequence) -> list:
        return [events.restrict(s, e) for s, e in self.boundaries]


def make_partition(n_scale: int, h_n, T: float) -> BlockPartition:
    if isinstance(h_n, float) and not h_n.is_integer():
        h_n = round_half_up(h_n)
    return BlockPartition(int(n_scale), int(h_n), float(T))


# Study block labels: h_n = 136.5, 273, 546 at n = 27300, T = 21600 (108, 216, 432 seconds).
STUDY_BLOCKS = {"2m": 108.0, "4m": 216.0, "7m": 432.0}


def resolve_hn_rule(rule, n_scale: int, T: Optional[float] = None) -> int:
    """Integer h_n from a rule.

    'sqrt', '2sqrt', ..., '16sqrt' (multiples of sqrt(n)), 'abs:<int>', a bare
    integer, '<x>s' for blocks of about x seconds, or the study labels
    '2m' / '4m' / '7m' (108, 216, 432 seconds). Time-based rules need T.
    """
    if isinstance(rule, (int, np.integer)):
        return int(rule)
    rule = str(rule).strip()
    if rule.startswith("abs:"):
        return int(rule[4:])
    if rule.isdigit():
        return int(rule)
    if rule.endswith("sqrt"):
        mult = rule[:-4]
        try:
            m = float(mult) if mult else 1.0
        except ValueError:
            raise ConfigError(f"unrecognised h_n rule {rule!r}") from None
        return round_half_up(m * math.sqrt(n_scale))
    secs = re.fullmatch(r"(\d+(?:\.\d+)?)s", rule)
    if secs or rule in STUDY_BLOCKS:
        if T is None:
            raise ConfigError(f"rule {rule!r} needs the horizon T")
        delta = float(secs.group(1)) if secs else STUDY_BLOCKS[rule]
        return round_half_up(n_scale * delta / T)
    raise ConfigError(f"unrecognised h_n rule {rule!r}")


# ---------------------------------------------------------------------------
# event files


def read_events_csv(path, horizon: Optional[float] = None) -> EventSequence:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise EventParseError(f"{path}: empty file")
    if lines[0].strip().lower() != "time":
        raise EventParseError(f"{path}:1: expected header 'time', got {lines[0]!r}")
    times = []
    prev = -math.inf
    for lineno, raw in enumerate(lines[1:], start=2):
        raw = raw.strip()
        if not raw:
            continue
        try:
            t = float(raw)
        except ValueError:
            raise EventParseError(f"{path}:{lineno}: not a number: {raw!r}") from None
        if t <= prev:
            raise EventParseError(f"{path}:{lineno}: time {t} not strictly after {prev}")
        times.append(t)
        prev = t
    if not times:
        raise EventParseError(f"{path}: no events")
    if horizon is None:
        horizon = times[-1]
    return EventSequence(np.array(times), float(horizon))


def write_events_csv(path, events: EventSequence) -> None:
    with open(path, "w") as fh:
        fh.write("time\n")
        for t in events.times:
            fh.write(f"{float(t)!r}\n")


def as_events(times: Sequence[float] | Iterable[float], horizon: float) -> EventSequence:
    return EventSequence(np.asarray(list(times), dtype=float), horizon)
