"""Flow-density measurement along wave-parallel zones and hysteresis analysis.

Zones are quadrilateral-ish regions of the time-space plane bounded left and
right by characteristic lines of slope w (< 0) anchored on the leader at a
regular time grid, above by the leader polyline and below by the last
follower polyline. Generalized flow/density come from per-vehicle travel time
and distance inside each zone. Loops live in (veh/km, veh/h) so the default
pattern thresholds are meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .trajectory import Trajectory

ZONE_DT_DEFAULT = 3.0
K_SCALE = 1000.0   # veh/m  -> veh/km
Q_SCALE = 3600.0   # veh/s  -> veh/h

NSL = "NSL"
PATTERN_ORDER = ("NSL", "CW+", "CW-", "CW", "CCW+", "CCW-", "CCW")
THRESHOLDS_MEDIAN_HIGH = (15.0, 4770.0, 8460.0)
THRESHOLDS_LOW = (400.0, 21700.0, 36700.0)


@dataclass(frozen=True)
class EdieZone:
    index: int
    polygon: np.ndarray      # (n, 2) vertices in (t, x), counter-oriented is fine
    dts: np.ndarray          # per-vehicle time spent inside (s)
    dxs: np.ndarray          # per-vehicle distance covered inside (m)
    raw_area: float          # m·s
    area: float              # adjusted by I/(I-1)
    k: float                 # veh/m
    q: float                 # veh/s

    def __post_init__(self):
        if self.area <= 0:
            raise ValueError("zone area must be positive")
        if self.k < 0 or self.q < 0:
            raise ValueError("negative flow or density")


def edie_measure(zone: EdieZone) -> tuple[float, float]:
    """Generalized (density, flow) = (sum travel time, sum distance) / area."""
    if zone.area <= 0:
        raise ValueError("zone area must be positive")
    return (float(np.sum(zone.dts)) / zone.area, float(np.sum(zone.dxs)) / zone.area)


def _crossing(traj: Trajectory, anchor_t: float, anchor_x: float, w: float) -> float | None:
    """Time the trajectory meets the line x = anchor_x + w (t - anchor_t).

    The gap x(t) - line(t) is strictly increasing (speeds are nonnegative and
    w < 0), so the crossing is unique when it exists within the record.
    """
    gap = traj.x - (anchor_x + w * (traj.t - anchor_t))
    if gap[0] > 1e-12 or gap[-1] < 0.0:
        return None
    pos = gap > 0
    if not pos.any():
        return float(traj.t[-1])   # grazes the line exactly at the record end
    i = int(np.argmax(pos))
    if i == 0:
        return float(traj.t[0])
    g0, g1 = gap[i - 1], gap[i]
    return float(traj.t[i - 1] + (traj.t[i] - traj.t[i - 1]) * (-g0) / (g1 - g0))


def _polyline_between(traj: Trajectory, ta: float, tb: float) -> np.ndarray:
    """(t, x) vertices from ta to tb including interior grid points."""
    i0 = int(np.searchsorted(traj.t, ta, side="right"))
    i1 = int(np.searchsorted(traj.t, tb, side="left"))
    pts = [(ta, traj.x_at(ta))]
    pts.extend((float(traj.t[i]), float(traj.x[i])) for i in range(i0, i1))
    pts.append((tb, traj.x_at(tb)))
    return np.array(pts)


def _shoelace(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def build_zones(trajs, w: float, zone_dt: float = ZONE_DT_DEFAULT) -> list[EdieZone]:
    """Slice the platoon band into wave-parallel zones anchored on the leader.

    Zones whose characteristics fail to cross every trajectory inside its
    recorded span (the ragged ends of the band) are dropped.
    """
    trajs = list(trajs)
    if len(trajs) < 2:
        raise ValueError("need at least two trajectories to bound a zone")
    if w >= 0:
        raise ValueError("wave speed must be negative")
    if zone_dt <= 0:
        raise ValueError("zone_dt must be positive")
    leader = trajs[0]
    last = trajs[-1]
    n_veh = len(trajs)
    n_anchor = int(math.floor((leader.duration + 1e-9) / zone_dt)) + 1
    anchors = [(leader.t0 + g * zone_dt, float(leader.x_at(leader.t0 + g * zone_dt)))
               for g in range(n_anchor)]
    # crossing time of every vehicle with every characteristic
    cross = np.full((n_anchor, n_veh), np.nan)
    for a, (ta, xa) in enumerate(anchors):
        for i, traj in enumerate(trajs):
            c = _crossing(traj, ta, xa, w)
            if c is not None:
                cross[a, i] = c
    zones = []
    for g in range(n_anchor - 1):
        if not (np.all(np.isfinite(cross[g])) and np.all(np.isfinite(cross[g + 1]))):
            continue
        dts = cross[g + 1] - cross[g]
        dxs = np.array([traj.x_at(cross[g + 1, i]) - traj.x_at(cross[g, i])
                        for i, traj in enumerate(trajs)])
        top = _polyline_between(leader, cross[g, 0], cross[g + 1, 0])
        bottom = _polyline_between(last, cross[g, -1], cross[g + 1, -1])
        poly = np.vstack([top, bottom[::-1]])
        raw = abs(_shoelace(poly))
        if raw <= 0:
            continue
        area = raw * n_veh / (n_veh - 1)
        zones.append(EdieZone(index=len(zones), polygon=poly, dts=dts, dxs=dxs,
                              raw_area=raw, area=area,
                              k=float(np.sum(dts)) / area, q=float(np.sum(dxs)) / area))
    if not zones:
        raise ValueError("no zone's characteristics cross every trajectory")
    return zones


def smooth_loop(points: np.ndarray) -> np.ndarray:
    """Window-3 centered moving average; endpoints average what is available."""
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 3:
        raise ValueError("need at least 3 points to smooth")
    out = pts.copy()
    out[1:-1] = (pts[:-2] + pts[1:-1] + pts[2:]) / 3.0
    out[0] = (pts[0] + pts[1]) / 2.0
    out[-1] = (pts[-2] + pts[-1]) / 2.0
    return out


def cross_products(points: np.ndarray, w: float,
                   center: np.ndarray | None = None
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orientation and equilibrium-shift series for a loop in (veh/km, veh/h).

    cross[g] is the 2-D cross product of successive center-to-point vectors
    (positive = counter-clockwise). eq_init[g] crosses the equilibrium-line
    direction through the first point with the vector from the first point to
    point g (positive = above the line); eq_new anchors at the last point.
    The line direction comes from the wave speed, rescaled to the loop units.
    """
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 3:
        raise ValueError("need at least 3 loop points")
    if w >= 0:
        raise ValueError("wave speed must be negative")
    w_loop = w * Q_SCALE / K_SCALE
    o = np.mean(pts, axis=0) if center is None else np.asarray(center, dtype=float)
    h = pts - o
    cross = h[:-1, 0] * h[1:, 1] - h[:-1, 1] * h[1:, 0]

    def eq_series(anchor: np.ndarray) -> np.ndarray:
        he = np.array([-anchor[1] / w_loop, -anchor[1]])
        rel = pts - anchor
        return he[0] * rel[:, 1] - he[1] * rel[:, 0]

    return cross, eq_series(pts[0]), eq_series(pts[-1])


@dataclass(frozen=True)
class HysteresisLoop:
    points: np.ndarray      # (G, 2) smoothed (veh/km, veh/h)
    center: np.ndarray      # (2,)
    sd: np.ndarray          # (2,) population SDs of k and q
    cross: np.ndarray       # (G-1,)
    eq_init: np.ndarray     # (G,)
    eq_new: np.ndarray      # (G,)
    w: float                # m/s, the wave speed the zones/equilibria used
    pattern: str | None = None

    @property
    def magnitude(self) -> float:
        """Largest |cross| — the loop's hysteresis magnitude."""
        return float(np.max(np.abs(self.cross)))

    def to_frame(self) -> pd.DataFrame:
        g = np.arange(self.points.shape[0])
        cross = np.append(self.cross, np.nan)
        return pd.DataFrame({"zone": g, "k": self.points[:, 0], "q": self.points[:, 1],
                             "cross": cross, "eq_init": self.eq_init,
                             "eq_new": self.eq_new})


def build_loop(zones, w: float, smooth: bool = True) -> HysteresisLoop:
    """Assemble the flow-density loop of a zone sequence (or raw point array)."""
    if isinstance(zones, np.ndarray):
        pts = zones.astype(float)
    else:
        zones = list(zones)
        pts = np.array([[z.k * K_SCALE, z.q * Q_SCALE] for z in zones])
    if pts.shape[0] < 4:
        raise ValueError("need at least 4 zones for a loop")
    if smooth:
        pts = smooth_loop(pts)
    center = np.mean(pts, axis=0)
    sd = np.std(pts, axis=0)
    cross, eq_init, eq_new = cross_products(pts, w, center=center)
    return HysteresisLoop(points=pts, center=center, sd=sd, cross=cross,
                          eq_init=eq_init, eq_new=eq_new, w=w)


def classify_hysteresis(loop: HysteresisLoop, h_t: float, h_t0: float, h_t1: float) -> str:
    """Seven-way pattern from orientation and equilibrium-shift extremes.

    Magnitude below h_t is no-significant-loop. Otherwise the sign of the
    largest-|.| cross sets CW/CCW; dipping below the initial equilibrium by
    more than h_t0 AND overshooting the new one by more than h_t1 marks the
    composite (bare) form; otherwise the superscript follows the sign of the
    extreme initial-equilibrium excursion.
    """
    h_max0 = float(loop.cross[np.argmax(np.abs(loop.cross))])
    if abs(h_max0) <= h_t:
        return NSL
    orient = "CCW" if h_max0 > 0 else "CW"
    if float(np.min(loop.eq_init)) < -h_t0 and float(np.max(loop.eq_new)) > h_t1:
        return orient
    extreme = float(loop.eq_init[np.argmax(np.abs(loop.eq_init))])
    if extreme < -h_t0:
        return orient + "-"
    if extreme > h_t0:
        return orient + "+"
    return orient + ("-" if extreme < 0 else "+")


def classified(loop: HysteresisLoop, thresholds: tuple[float, float, float]) -> HysteresisLoop:
    return replace(loop, pattern=classify_hysteresis(loop, *thresholds))


def compare_hysteresis(obs: list[HysteresisLoop], sim: list[HysteresisLoop]
                       ) -> tuple[float, float, float]:
    """(d_O, d_sd, NRMSE_H): center distance, SD-pair distance, and cross-series
    NRMSE, each averaged over paired loops."""
    if len(obs) != len(sim) or not obs:
        raise ValueError("need equal-length non-empty loop lists")
    d_o, d_sd, nrmse = [], [], []
    for lo, ls in zip(obs, sim):
        if lo.cross.shape != ls.cross.shape:
            raise ValueError("paired loops must have equal zone counts")
        d_o.append(float(np.linalg.norm(lo.center - ls.center)))
        d_sd.append(float(np.linalg.norm(lo.sd - ls.sd)))
        rms = float(np.sqrt(np.mean(lo.cross ** 2)))
        err = float(np.sqrt(np.mean((ls.cross - lo.cross) ** 2)))
        nrmse.append(0.0 if err == 0.0 else (math.inf if rms == 0.0 else err / rms))
    return (float(np.mean(d_o)), float(np.mean(d_sd)), float(np.mean(nrmse)))
