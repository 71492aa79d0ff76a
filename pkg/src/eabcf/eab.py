"""Extended asymmetric-behavior car following.

The follower obeys x_f(t + eta(t)*tau) = x_l(t) - eta(t)*delta with eta(t) a
piecewise-linear deviation profile around 1. eta(t) is parameterized by four
levels (eta0..eta3), three segment slopes (eps0..eps2) and the deviation start
t1; the remaining breakpoints follow from t_{j+1} = t_j + (eta_{j+1} - eta_j)/eps_j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .newell import NewellParams
from .trajectory import CFPair, Trajectory, central_diff, interp_extrap

ETA_BRACKET = (0.05, 5.0)
SMOOTH_WINDOW = 0.5        # s, centered moving average applied to measured eta
DELTA_ETA_T_ACC = 0.09     # significance threshold on eta level changes
DELTA_ETA_T_HDV = 0.18
MONOTONE_REPAIR_FRAC = 0.01

PATTERN_NE = "NE"
PATTERN_CONCAVE = "Concave"
PATTERN_CONVEX = "Convex"
PATTERN_CONCAVE_CONVEX = "ConcaveConvex"
PATTERN_CONVEX_CONCAVE = "ConvexConcave"
PATTERN_NONDECREASING = "NonDecreasing"
PATTERN_NONINCREASING = "NonIncreasing"
PATTERNS = (PATTERN_NE, PATTERN_CONCAVE, PATTERN_CONVEX, PATTERN_CONCAVE_CONVEX,
            PATTERN_CONVEX_CONCAVE, PATTERN_NONDECREASING, PATTERN_NONINCREASING)

RESPONSE_EARLY = "early"
RESPONSE_LATE = "late"
RESPONSE_OTHER = "other"
RESPONSE_NA = "not_applicable"
SINGLE_PATTERNS = (PATTERN_CONCAVE, PATTERN_CONVEX, PATTERN_NONDECREASING, PATTERN_NONINCREASING)

THETA_FIELDS = ("eta0", "eta1", "eta2", "eta3", "eps0", "eps1", "eps2", "t1")


class NonMonotoneMappingError(ValueError):
    """The arrival-time mapping s(t) = t + eta(t)*tau is not increasing."""


class SpacingCollapseError(ValueError):
    """Simulated spacing dropped to zero or below."""


def _segment_length(d_eta: float, eps: float) -> float:
    if d_eta == 0.0 and eps == 0.0:
        return 0.0
    return d_eta / eps


def theta_valid(theta: np.ndarray) -> bool:
    """Structural validity of one 8-vector: positive levels, sign-consistent segments."""
    return bool(theta_valid_mask(np.asarray(theta, dtype=float)[None, :])[0])


def theta_valid_mask(thetas: np.ndarray) -> np.ndarray:
    """Vectorized validity over an (n, 8) array."""
    th = np.asarray(thetas, dtype=float)
    levels = th[:, 0:4]
    ok = np.all(np.isfinite(th), axis=1) & np.all(levels > 0.0, axis=1)
    for j in range(3):
        d = th[:, j + 1] - th[:, j]
        e = th[:, 4 + j]
        ok &= ((d == 0.0) & (e == 0.0)) | (d * e > 0.0)
    return ok


@dataclass(frozen=True)
class EABParams:
    """One deviation profile theta = (eta0..eta3, eps0..eps2, t1)."""

    eta0: float
    eta1: float
    eta2: float
    eta3: float
    eps0: float
    eps1: float
    eps2: float
    t1: float

    def __post_init__(self):
        arr = self.as_array()
        if not theta_valid(arr):
            raise ValueError(f"invalid theta (sign-inconsistent segment or non-positive level): {arr}")

    def as_array(self) -> np.ndarray:
        return np.array([self.eta0, self.eta1, self.eta2, self.eta3,
                         self.eps0, self.eps1, self.eps2, self.t1], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "EABParams":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (8,):
            raise ValueError("theta must have 8 components")
        return cls(*[float(a) for a in arr])

    @classmethod
    def from_levels(cls, levels, t1: float, durations) -> "EABParams":
        """Build from four eta levels and three segment durations (s).

        Zero-change segments take duration 0 and slope 0.
        """
        e0, e1, e2, e3 = [float(v) for v in levels]
        d = [float(v) for v in durations]
        eps = []
        for (a, b), dur in zip(((e0, e1), (e1, e2), (e2, e3)), d):
            if b == a:
                eps.append(0.0)
            else:
                if dur <= 0:
                    raise ValueError("non-zero eta change needs a positive duration")
                eps.append((b - a) / dur)
        return cls(e0, e1, e2, e3, eps[0], eps[1], eps[2], float(t1))

    @property
    def t2(self) -> float:
        return self.t1 + _segment_length(self.eta1 - self.eta0, self.eps0)

    @property
    def t3(self) -> float:
        return self.t2 + _segment_length(self.eta2 - self.eta1, self.eps1)

    @property
    def t4(self) -> float:
        return self.t3 + _segment_length(self.eta3 - self.eta2, self.eps2)

    def breakpoints(self) -> np.ndarray:
        return np.array([self.t1, self.t2, self.t3, self.t4])

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in THETA_FIELDS}


def _knots(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t1 = theta[7]
    t2 = t1 + _segment_length(theta[1] - theta[0], theta[4])
    t3 = t2 + _segment_length(theta[2] - theta[1], theta[5])
    t4 = t3 + _segment_length(theta[3] - theta[2], theta[6])
    return np.array([t1, t2, t3, t4]), theta[0:4]


def _eta_on(theta: np.ndarray, t: np.ndarray) -> np.ndarray:
    tk, lv = _knots(theta)
    return np.interp(t, tk, lv)


def eta_eval(theta: EABParams | np.ndarray, t) -> np.ndarray:
    """eta(t) on the piecewise-linear profile; constant eta0 before t1, eta3 after t4."""
    arr = theta.as_array() if isinstance(theta, EABParams) else np.asarray(theta, dtype=float)
    return _eta_on(arr, np.asarray(t, dtype=float))


def _simulate_x(t: np.ndarray, x_l: np.ndarray, tau: float, delta: float,
                theta: np.ndarray, origin: float) -> tuple[np.ndarray, str]:
    """Follower positions on the leader grid; returns (x_f, error-string)."""
    eta = _eta_on(theta, t - origin)
    s = t + eta * tau
    y = x_l - eta * delta
    ds = np.diff(s)
    bad = np.flatnonzero(ds <= 0.0)
    if bad.size:
        if bad.size > MONOTONE_REPAIR_FRAC * ds.size:
            lo, hi = t[bad[0]], t[min(bad[-1] + 1, t.size - 1)]
            return y, f"non-monotone arrival mapping over t in [{lo:.2f}, {hi:.2f}] s"
        order = np.argsort(s, kind="stable")
        s, y = s[order], y[order]
    x_f = interp_extrap(t, s, y)
    if np.min(x_l - x_f) <= 0.0:
        return x_f, "spacing collapsed to zero"
    return x_f, ""


def simulate_follower(leader: Trajectory, p: NewellParams, theta: EABParams,
                      x0: float | None = None, eta_origin: float | None = None) -> Trajectory:
    """Simulate a follower for the whole leader window.

    The parametric solution (t + eta*tau, x_l - eta*delta) is interpolated back
    onto the leader grid; the window edges extend the equilibrium branches
    linearly. eta's clock starts at eta_origin (default: the leader's first
    timestamp). A supplied x0 rigidly translates the follower so that its first
    sample equals x0 (off-equilibrium start).
    """
    origin = leader.t0 if eta_origin is None else float(eta_origin)
    arr = theta.as_array()
    x_f, err = _simulate_x(leader.t, leader.x, p.tau, p.delta, arr, origin)
    if err:
        if "non-monotone" in err:
            raise NonMonotoneMappingError(err)
        raise SpacingCollapseError(err)
    if x0 is not None:
        x_f = x_f + (float(x0) - x_f[0])
    v_f = central_diff(x_f, leader.dt)
    return Trajectory(f"{leader.vehicle_id}+eab", leader.dt, leader.t.copy(), x_f, v_f)


def smooth_symmetric(y: np.ndarray, half: int) -> np.ndarray:
    """Centered moving average whose window shrinks symmetrically at the ends.

    Symmetric shrink keeps linear segments exact.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    out = np.empty(n)
    c = np.concatenate([[0.0], np.cumsum(y)])
    for i in range(n):
        m = min(half, i, n - 1 - i)
        out[i] = (c[i + m + 1] - c[i - m]) / (2 * m + 1)
    return out


@dataclass(frozen=True)
class EtaSeries:
    """Measured deviation series at leader timestamps (invalid samples dropped)."""

    t: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        if self.t.size != self.eta.size:
            raise ValueError("t and eta must have equal length")


def measure_eta(pair: CFPair, p: NewellParams, bracket: tuple[float, float] = ETA_BRACKET,
                smooth_window: float = SMOOTH_WINDOW, n_bisect: int = 48) -> EtaSeries:
    """Invert the shift relation per leader timestamp by bisection.

    For each leader time t the root of f(eta) = x_f(t + eta*tau) - x_l(t) +
    eta*delta is searched inside `bracket`; f is increasing in eta, so the root
    is unique. Samples whose root escapes the bracket, or whose arrival time
    t + eta*tau leaves the follower's window, are dropped. The surviving series
    is smoothed by a centered moving average of `smooth_window` seconds.
    """
    t = pair.leader.t
    x_l = pair.leader.x
    tf, xf = pair.follower.t, pair.follower.x

    def f(eta):
        return interp_extrap(t + eta * p.tau, tf, xf) - x_l + eta * p.delta

    lo = np.full(t.size, bracket[0])
    hi = np.full(t.size, bracket[1])
    f_lo = f(lo)
    f_hi = f(hi)
    valid = (f_lo < 0.0) & (f_hi > 0.0)
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        pos = f(mid) > 0.0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    eta = 0.5 * (lo + hi)
    arrive = t + eta * p.tau
    valid &= (arrive >= tf[0] - 1e-9) & (arrive <= tf[-1] + 1e-9)
    if not np.any(valid):
        raise ValueError("no valid eta samples inside the bracket")

    half = max(1, int(round(smooth_window / pair.dt / 2.0)))
    eta_s = eta.copy()
    # smooth each contiguous valid run on its own
    idx = np.flatnonzero(valid)
    splits = np.flatnonzero(np.diff(idx) > 1)
    for run in np.split(idx, splits + 1):
        eta_s[run] = smooth_symmetric(eta[run], half)
    return EtaSeries(t[valid], eta_s[valid])


@dataclass(frozen=True)
class ReactionPattern:
    category: str
    response: str

    def __post_init__(self):
        if self.category not in PATTERNS:
            raise ValueError(f"unknown category {self.category!r}")
        if self.category in SINGLE_PATTERNS:
            if self.response not in (RESPONSE_EARLY, RESPONSE_LATE, RESPONSE_OTHER):
                raise ValueError("single patterns require early/late/other response")
        elif self.response != RESPONSE_NA:
            raise ValueError(f"{self.category} takes response {RESPONSE_NA!r}")

    def label(self) -> str:
        if self.response == RESPONSE_NA:
            return self.category
        return f"{self.category}/{self.response}"


def _sign(d: float, thr: float) -> int:
    if d > thr:
        return 1
    if d < -thr:
        return -1
    return 0


def _category_from_deltas(deltas: tuple[float, float, float], net: float, thr: float) -> str:
    signs = tuple(_sign(d, thr) for d in deltas)
    if signs == (0, 0, 0):
        return PATTERN_NE
    if signs == (1, -1, 1):
        return PATTERN_CONCAVE_CONVEX
    if signs == (-1, 1, -1):
        return PATTERN_CONVEX_CONCAVE
    if signs[0] == 1 and signs[1] == -1 and abs(net) <= thr:
        return PATTERN_CONCAVE
    if signs[0] == -1 and signs[1] == 1 and abs(net) <= thr:
        return PATTERN_CONVEX
    if all(s in (0, 1) for s in signs) and net > thr:
        return PATTERN_NONDECREASING
    if all(s in (0, -1) for s in signs) and -net > thr:
        return PATTERN_NONINCREASING
    # fall back to the dominant move and its strongest opposition
    j = int(np.argmax(np.abs(deltas)))
    d = signs[j] if signs[j] != 0 else (1 if deltas[j] > 0 else -1)
    later_opp = any(signs[k] == -d for k in range(j + 1, 3))
    earlier_opp = any(signs[k] == -d for k in range(j))
    if d > 0:
        if later_opp or earlier_opp:
            return PATTERN_CONCAVE if later_opp else PATTERN_CONVEX
        return PATTERN_NONDECREASING if net > thr else PATTERN_CONCAVE
    if later_opp or earlier_opp:
        return PATTERN_CONVEX if later_opp else PATTERN_CONCAVE
    return PATTERN_NONINCREASING if -net > thr else PATTERN_CONVEX


def _turning_points(t: np.ndarray, y: np.ndarray, thr: float) -> list[tuple[float, float]]:
    """Committed reversals of a series: extremes confirmed by a counter-move > thr."""
    turns = []
    d = 0
    ext_v, ext_t = y[0], t[0]
    for ti, yi in zip(t[1:], y[1:]):
        if d == 0:
            if yi >= ext_v + thr:
                d, ext_v, ext_t = 1, yi, ti
            elif yi <= ext_v - thr:
                d, ext_v, ext_t = -1, yi, ti
        elif d == 1:
            if yi > ext_v:
                ext_v, ext_t = yi, ti
            elif yi <= ext_v - thr:
                turns.append((ext_t, ext_v))
                d, ext_v, ext_t = -1, yi, ti
        else:
            if yi < ext_v:
                ext_v, ext_t = yi, ti
            elif yi >= ext_v + thr:
                turns.append((ext_t, ext_v))
                d, ext_v, ext_t = 1, yi, ti
    return turns


def _series_features(t: np.ndarray, y: np.ndarray, thr: float,
                     settle_window: float) -> tuple[tuple, float, float | None]:
    dt = float(np.median(np.diff(t))) if t.size > 1 else settle_window
    w = max(1, int(round(settle_window / dt)))
    eta0 = float(np.mean(y[:w]))
    eta3 = float(np.mean(y[-w:]))
    turns = _turning_points(t, y, thr)
    if len(turns) > 2:
        vals = [tv for _, tv in turns]
        hi = int(np.argmax(vals))
        lo = int(np.argmin(vals))
        keep = sorted({hi, lo})
        turns = [turns[i] for i in keep]
    levels = [eta0] + [tv for _, tv in turns] + [eta3]
    while len(levels) < 4:
        levels.append(levels[-1])
    deltas = tuple(levels[i + 1] - levels[i] for i in range(3))

    if turns:
        onset = turns[-1][0]
    else:
        away = np.abs(y - eta3) > thr
        onset = float(t[int(np.flatnonzero(away)[-1]) + 1]) if np.any(away) and \
            int(np.flatnonzero(away)[-1]) + 1 < t.size else float(t[0])
    return deltas, eta3 - eta0, onset


def classify_pattern(eta, delta_eta_t: float, phases=None,
                     restore_time: float = 2.0) -> ReactionPattern:
    """Assign a reaction pattern and (for single patterns) a response timing.

    `eta` is either an EABParams or an EtaSeries / (t, values) pair. `phases`
    (a LeaderPhases) must share the clock of the input: the theta time origin
    for parameter input, the series timestamps for series input. For series
    input, `restore_time` sets the window used to estimate the initial and
    final levels.

    Response: early if the restoration onset falls inside the deceleration
    interval, late if after the acceleration interval ends, other otherwise;
    composites and NE take not_applicable.
    """
    if delta_eta_t <= 0:
        raise ValueError("delta_eta_t must be positive")
    if isinstance(eta, EABParams):
        levels = (eta.eta0, eta.eta1, eta.eta2, eta.eta3)
        deltas = tuple(levels[i + 1] - levels[i] for i in range(3))
        net = levels[3] - levels[0]
        onset = eta.t3
    else:
        if isinstance(eta, EtaSeries):
            t, y = eta.t, eta.eta
        else:
            t, y = (np.asarray(v, dtype=float) for v in eta)
        if t.size < 4:
            raise ValueError("series too short to classify")
        deltas, net, onset = _series_features(t, y, delta_eta_t, restore_time)

    category = _category_from_deltas(deltas, net, delta_eta_t)
    if category not in SINGLE_PATTERNS:
        return ReactionPattern(category, RESPONSE_NA)
    if phases is None:
        return ReactionPattern(category, RESPONSE_OTHER)
    response = RESPONSE_OTHER
    if phases.decel[0] <= onset <= phases.decel[1]:
        response = RESPONSE_EARLY
    elif onset > phases.accel[1]:
        response = RESPONSE_LATE
    return ReactionPattern(category, response)


def iqr_threshold(eta_values) -> float:
    """Interquartile range of a sample of eta levels, one way to set delta_eta_t."""
    v = np.asarray(eta_values, dtype=float)
    if v.size < 4:
        raise ValueError("need at least 4 values for an IQR threshold")
    q75, q25 = np.percentile(v, [75.0, 25.0])
    return float(q75 - q25)
