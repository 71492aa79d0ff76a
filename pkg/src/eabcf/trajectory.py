"""Trajectory containers, ingestion, resampling, time shifting, and phase detection.

Units are SI throughout: time s, position m, speed m/s. All analysis runs on a
uniform grid (default 0.1 s).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

DEFAULT_DT = 0.1
KINEMATIC_TOL = 0.5   # m/s allowed between reported v and finite-differenced x
MIN_OVERLAP = 30.0    # s of shared leader/follower window required per pair

VEHICLE_CLASSES = ("HDV", "ACC")
SPEED_REGIMES = ("low", "median_high")


def _as_float_array(a) -> np.ndarray:
    return np.asarray(a, dtype=float)


def central_diff(x: np.ndarray, dt: float) -> np.ndarray:
    """Speeds from positions: central differences, one-sided at the ends."""
    x = _as_float_array(x)
    if x.size < 2:
        raise ValueError("need at least two samples to differentiate")
    v = np.empty_like(x)
    v[1:-1] = (x[2:] - x[:-2]) / (2.0 * dt)
    v[0] = (x[1] - x[0]) / dt
    v[-1] = (x[-1] - x[-2]) / dt
    return v


def interp_extrap(t_new: np.ndarray, t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Linear interpolation with linear extrapolation from the boundary segments."""
    t_new = np.asarray(t_new, dtype=float)
    out = np.interp(t_new, t, y)
    if t.size >= 2:
        lo = t_new < t[0]
        if np.any(lo):
            slope = (y[1] - y[0]) / (t[1] - t[0])
            out[lo] = y[0] + slope * (t_new[lo] - t[0])
        hi = t_new > t[-1]
        if np.any(hi):
            slope = (y[-1] - y[-2]) / (t[-1] - t[-2])
            out[hi] = y[-1] + slope * (t_new[hi] - t[-1])
    return out


@dataclass(frozen=True)
class Trajectory:
    """A single vehicle's sampled trajectory on a uniform time grid."""

    vehicle_id: str
    dt: float
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", _as_float_array(self.t))
        object.__setattr__(self, "x", _as_float_array(self.x))
        object.__setattr__(self, "v", _as_float_array(self.v))
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not (self.t.size == self.x.size == self.v.size):
            raise ValueError("t, x, v must have equal length")
        if self.t.size < 2:
            raise ValueError("trajectory needs at least two samples")
        dts = np.diff(self.t)
        if np.any(dts <= 0):
            raise ValueError(f"non-monotone time for vehicle {self.vehicle_id!r}")
        if not np.allclose(dts, self.dt, rtol=0.0, atol=1e-6 * max(self.dt, 1.0)):
            raise ValueError(f"time grid of vehicle {self.vehicle_id!r} is not uniform at dt={self.dt}")

    @classmethod
    def from_positions(cls, vehicle_id: str, dt: float, t, x) -> "Trajectory":
        t = _as_float_array(t)
        x = _as_float_array(x)
        return cls(vehicle_id, dt, t, x, central_diff(x, dt))

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def t1(self) -> float:
        return float(self.t[-1])

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def x_at(self, times, extrapolate: bool = False) -> np.ndarray:
        if extrapolate:
            return interp_extrap(times, self.t, self.x)
        return np.interp(times, self.t, self.x)

    def v_at(self, times) -> np.ndarray:
        return np.interp(times, self.t, self.v)

    def slice(self, t_start: float, t_end: float) -> "Trajectory":
        """Subset to grid points inside [t_start, t_end] (inclusive, with tolerance)."""
        eps = 1e-9 * max(1.0, abs(t_end))
        m = (self.t >= t_start - eps) & (self.t <= t_end + eps)
        if m.sum() < 2:
            raise ValueError("slice window contains fewer than two samples")
        return replace(self, t=self.t[m], x=self.x[m], v=self.v[m])


def resample(traj: Trajectory, dt_new: float) -> Trajectory:
    """Resample onto a new uniform grid: linear in x, speeds by central difference.

    Raises if dt_new exceeds half the trajectory span.
    """
    if dt_new <= 0:
        raise ValueError("dt_new must be positive")
    if dt_new > traj.duration / 2.0:
        raise ValueError("dt_new exceeds half the trajectory span")
    n = int(np.floor(traj.duration / dt_new + 1e-9)) + 1
    t_new = traj.t0 + dt_new * np.arange(n)
    x_new = np.interp(t_new, traj.t, traj.x)
    return Trajectory(traj.vehicle_id, dt_new, t_new, x_new, central_diff(x_new, dt_new))


def newell_shift(leader: Trajectory, tau: float, delta: float) -> Trajectory:
    """Shifted copy satisfying x(t + tau) = x_leader(t) - delta, on the leader's lattice.

    tau and delta may be negative (inverse shifts); output covers the lattice
    points inside [t0 + tau, t_end + tau].
    """
    dt = leader.dt
    i0 = int(np.ceil(tau / dt - 1e-9))
    i1 = int(np.floor((leader.t[-1] - leader.t[0] + tau) / dt + 1e-9))
    if i1 - i0 + 1 < 2:
        raise ValueError("shifted window too short")
    t_new = leader.t0 + dt * np.arange(i0, i1 + 1)
    x_new = np.interp(t_new - tau, leader.t, leader.x) - delta
    v_new = np.interp(t_new - tau, leader.t, leader.v)
    return Trajectory(f"{leader.vehicle_id}+shift", dt, t_new, x_new, v_new)


@dataclass(frozen=True)
class PairLabel:
    """Grouping label of a leader-follower pair."""

    vehicle_class: str
    car_model: str = "unknown"
    engine_mode: str = "normal"
    speed_regime: str = "median_high"

    def __post_init__(self):
        if self.vehicle_class not in VEHICLE_CLASSES:
            raise ValueError(f"vehicle_class must be one of {VEHICLE_CLASSES}, got {self.vehicle_class!r}")
        if self.speed_regime not in SPEED_REGIMES:
            raise ValueError(f"speed_regime must be one of {SPEED_REGIMES}, got {self.speed_regime!r}")

    def group_key(self) -> str:
        return f"{self.vehicle_class}:{self.car_model}:{self.engine_mode}:{self.speed_regime}"


@dataclass(frozen=True)
class CFPair:
    """A leader-follower pair trimmed to a shared uniform grid."""

    pair_id: str
    leader: Trajectory
    follower: Trajectory
    label: PairLabel

    def __post_init__(self):
        lead, foll = self.leader, self.follower
        if abs(lead.dt - foll.dt) > 1e-9:
            raise ValueError("leader and follower must share dt")
        if lead.t.size != foll.t.size or not np.allclose(lead.t, foll.t, atol=1e-6 * lead.dt):
            raise ValueError("leader and follower must share the time grid")
        if lead.duration < MIN_OVERLAP - 1e-9:
            raise ValueError(f"pair {self.pair_id!r}: overlap {lead.duration:.1f} s is below {MIN_OVERLAP} s")
        if np.any(foll.x >= lead.x):
            raise ValueError(f"overtake detected in pair {self.pair_id!r}")

    @property
    def t(self) -> np.ndarray:
        return self.leader.t

    @property
    def dt(self) -> float:
        return self.leader.dt

    def spacing(self) -> np.ndarray:
        return self.leader.x - self.follower.x


def align_pair(leader: Trajectory, follower: Trajectory, label: PairLabel,
               pair_id: str | None = None, min_overlap: float = MIN_OVERLAP) -> CFPair:
    """Trim (and if needed re-anchor) two trajectories onto a common lattice."""
    dt = leader.dt
    if abs(follower.dt - dt) > 1e-9:
        raise ValueError("leader and follower must share dt before alignment")
    t_start = max(leader.t0, follower.t0)
    t_end = min(leader.t1, follower.t1)
    if t_end - t_start < min_overlap:
        raise ValueError(f"pair {pair_id or follower.vehicle_id!r}: overlap {t_end - t_start:.1f} s "
                         f"is below {min_overlap} s")
    # anchor the common grid on the leader's lattice
    k0 = int(np.ceil((t_start - leader.t0) / dt - 1e-9))
    k1 = int(np.floor((t_end - leader.t0) / dt + 1e-9))
    grid = leader.t0 + dt * np.arange(k0, k1 + 1)
    lead = Trajectory(leader.vehicle_id, dt, grid, np.interp(grid, leader.t, leader.x),
                      np.interp(grid, leader.t, leader.v))
    foll = Trajectory(follower.vehicle_id, dt, grid, np.interp(grid, follower.t, follower.x),
                      np.interp(grid, follower.t, follower.v))
    pid = pair_id or f"{leader.vehicle_id}-{follower.vehicle_id}"
    return CFPair(pid, lead, foll, label)


@dataclass(frozen=True)
class LeaderPhases:
    """Deceleration and acceleration intervals of a single disturbance."""

    decel: tuple[float, float]
    accel: tuple[float, float]

    def __post_init__(self):
        if not (self.decel[0] <= self.decel[1] <= self.accel[0] <= self.accel[1]):
            raise ValueError("phase intervals must be ordered: decel before accel")

    def shifted(self, offset: float) -> "LeaderPhases":
        return LeaderPhases((self.decel[0] + offset, self.decel[1] + offset),
                            (self.accel[0] + offset, self.accel[1] + offset))


def detect_phases(leader: Trajectory, v_drop_frac: float = 0.1) -> LeaderPhases:
    """Locate the single speed disturbance of a leader trajectory.

    The deceleration interval runs from the first sample below
    (1 - v_drop_frac) * initial plateau speed until the speed minimum; the
    acceleration interval runs from the minimum until recovery to
    (1 - v_drop_frac) * final plateau speed.
    """
    if not (0.0 < v_drop_frac < 1.0):
        raise ValueError("v_drop_frac must be in (0, 1)")
    v = leader.v
    t = leader.t
    w = max(1, int(round(1.0 / leader.dt)))
    v_init = float(np.median(v[:w]))
    v_final = float(np.median(v[-w:]))
    thr_lo = (1.0 - v_drop_frac) * v_init
    thr_hi = (1.0 - v_drop_frac) * v_final

    below = v < thr_lo
    if not np.any(below):
        raise ValueError("no disturbance: speed never drops below the detection threshold")
    prev = np.concatenate([[False], below[:-1]])
    starts = np.flatnonzero(below & ~prev)
    if starts.size > 1:
        raise ValueError(f"multiple disturbances detected ({starts.size} dip episodes)")

    i_start = int(starts[0])
    v_min = float(np.min(v))
    i_min_first = int(np.argmin(v))
    # end of the minimum plateau, tolerant to flat bottoms
    at_min = np.flatnonzero(v <= v_min + 1e-9)
    i_min_last = int(at_min[-1])

    after = np.flatnonzero(v[i_min_last:] >= thr_hi)
    if after.size == 0:
        raise ValueError("disturbance does not recover to the final plateau")
    i_rec = i_min_last + int(after[0])
    return LeaderPhases((float(t[i_start]), float(t[i_min_first])),
                        (float(t[i_min_last]), float(t[i_rec])))


# ---------------------------------------------------------------------------
# file I/O

TRAJ_COLUMNS = ("vehicle_id", "t", "x", "v")


def save_trajectories(trajs: list[Trajectory], path) -> None:
    """Write trajectories as delimited text with a vehicle_id,t,x,v header."""
    frames = []
    for tr in trajs:
        frames.append(pd.DataFrame({"vehicle_id": tr.vehicle_id, "t": tr.t, "x": tr.x, "v": tr.v}))
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)


def _vehicle_from_frame(vid: str, df: pd.DataFrame, dt: float | None) -> Trajectory:
    t = df["t"].to_numpy(dtype=float)
    dts = np.diff(t)
    if np.any(dts <= 0):
        raise ValueError(f"non-monotone time for vehicle {vid!r}")
    step = float(np.median(dts)) if dt is None else dt
    if np.any(dts > 2.0 * step + 1e-9):
        raise ValueError(f"gap larger than 2*dt in vehicle {vid!r}")
    x = df["x"].to_numpy(dtype=float)
    if np.any(np.diff(x) < -1e-9):
        raise ValueError(f"position of vehicle {vid!r} decreases (forward motion required)")
    if "v" in df.columns and not df["v"].isna().any():
        v = df["v"].to_numpy(dtype=float)
    else:
        v = None
    # snap onto a uniform grid when sampling jitters
    n = int(np.floor((t[-1] - t[0]) / step + 1e-9)) + 1
    grid = t[0] + step * np.arange(n)
    xg = np.interp(grid, t, x)
    if v is None:
        vg = central_diff(xg, step)
    else:
        vg = np.interp(grid, t, v)
        if np.any(vg < -1e-9):
            raise ValueError(f"negative speed for vehicle {vid!r}")
        resid = np.max(np.abs(vg[1:-1] - central_diff(xg, step)[1:-1]))
        if resid > KINEMATIC_TOL:
            warnings.warn(f"vehicle {vid!r}: reported speeds deviate from differenced "
                          f"positions by up to {resid:.2f} m/s", stacklevel=2)
    return Trajectory(str(vid), step, grid, xg, vg)


def load_trajectories(data_path, manifest_path, schema: dict | None = None,
                      dt: float | None = None, min_overlap: float = MIN_OVERLAP) -> list[CFPair]:
    """Load a trajectory table plus a pair manifest into validated CFPairs.

    schema maps canonical column names (vehicle_id, t, x, v) to the file's
    column names. Vehicles with sampling gaps above 2*dt invalidate the pairs
    that reference them (skipped with a warning); malformed rows raise.
    """
    df = pd.read_csv(data_path)
    colmap = {k: k for k in TRAJ_COLUMNS}
    if schema:
        colmap.update(schema)
    missing = [c for c in ("vehicle_id", "t", "x") if colmap[c] not in df.columns]
    if missing:
        raise ValueError(f"schema mismatch: columns {missing} not found in {data_path}")
    rename = {v: k for k, v in colmap.items() if v in df.columns}
    df = df.rename(columns=rename)

    manifest = pd.read_csv(manifest_path)
    for col in ("leader_id", "follower_id", "vehicle_class"):
        if col not in manifest.columns:
            raise ValueError(f"schema mismatch: manifest column {col!r} not found")

    vehicles: dict[str, Trajectory | Exception] = {}
    for vid, sub in df.groupby("vehicle_id", sort=False):
        try:
            vehicles[str(vid)] = _vehicle_from_frame(str(vid), sub, dt)
        except ValueError as exc:
            if "gap larger" in str(exc):
                vehicles[str(vid)] = exc
            else:
                raise

    pairs = []
    for row in manifest.itertuples(index=False):
        lid, fid = str(row.leader_id), str(row.follower_id)
        label = PairLabel(
            vehicle_class=str(row.vehicle_class),
            car_model=str(getattr(row, "car_model", "unknown")),
            engine_mode=str(getattr(row, "engine_mode", "normal")),
            speed_regime=str(getattr(row, "speed_regime", "median_high")),
        )
        for vid in (lid, fid):
            if vid not in vehicles:
                raise ValueError(f"manifest references unknown vehicle {vid!r}")
        skip = False
        for vid in (lid, fid):
            if isinstance(vehicles[vid], Exception):
                warnings.warn(f"skipping pair {lid}-{fid}: {vehicles[vid]}", stacklevel=2)
                skip = True
        if skip:
            continue
        pid = str(row.pair_id) if hasattr(row, "pair_id") else None
        pairs.append(align_pair(vehicles[lid], vehicles[fid], label, pair_id=pid,
                                min_overlap=min_overlap))
    return pairs
