"""Synthetic disturbance datasets with known ground truth.

Leaders follow trapezoidal speed profiles (steady, brake, hold, recover,
steady) with corner times on the sample grid so positions integrate exactly.
Followers are simulated from planted deviation profiles drawn per reaction
pattern, optionally with AR(1) measurement noise on positions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .eab import EABParams, simulate_follower
from .newell import NewellParams
from .trajectory import (CFPair, DEFAULT_DT, LeaderPhases, PairLabel, Trajectory,
                         align_pair, save_trajectories)

ACC_PARAMS = NewellParams(tau=1.1, delta=10.0)
HDV_PARAMS = NewellParams(tau=1.0, delta=6.0)

NOISE_SIGMA_DEFAULT = 0.1   # m, stationary SD of the AR(1) position noise
NOISE_RHO = 0.9

_GEN_KEY = 105

# speed profile corner schedule: (t_end, v) segments, piecewise linear in v
_PROFILES = {
    "median_high": ((20.0, 30.0), (32.0, 15.0), (36.0, 15.0), (48.0, 30.0), (70.0, 30.0)),
    "low": ((20.0, 15.0), (30.0, 5.0), (34.0, 5.0), (44.0, 15.0), (70.0, 15.0)),
}
_PHASES = {
    "median_high": LeaderPhases(decel=(20.0, 32.0), accel=(36.0, 48.0)),
    "low": LeaderPhases(decel=(20.0, 30.0), accel=(34.0, 44.0)),
}

PATTERN_FACTORY_NAMES = ("concave", "convex", "concave_convex", "convex_concave",
                         "nondecreasing", "nonincreasing", "ne")


def leader_phases(regime: str) -> LeaderPhases:
    return _PHASES[regime]


def trapezoid_leader(regime: str = "median_high", dt: float = DEFAULT_DT,
                     vehicle_id: str = "leader", x0: float = 0.0) -> Trajectory:
    """Piecewise-linear speed profile integrated exactly onto the grid."""
    if regime not in _PROFILES:
        raise ValueError(f"unknown speed regime {regime!r}")
    segs = _PROFILES[regime]
    t_end = segs[-1][0]
    n = int(round(t_end / dt))
    t = np.arange(n + 1) * dt
    knot_t = [0.0] + [s[0] for s in segs]
    knot_v = [segs[0][1]] + [s[1] for s in segs]
    v = np.interp(t, knot_t, knot_v)
    x = x0 + np.concatenate([[0.0], np.cumsum((v[1:] + v[:-1]) * 0.5 * dt)])
    return Trajectory(vehicle_id, dt, t, x, v)


def ar1_noise(n: int, rng: np.random.Generator, sigma: float = NOISE_SIGMA_DEFAULT,
              rho: float = NOISE_RHO) -> np.ndarray:
    e = np.empty(n)
    e[0] = rng.normal(0.0, sigma)
    innov = rng.normal(0.0, sigma * np.sqrt(1.0 - rho * rho), size=n - 1)
    for i in range(1, n):
        e[i] = rho * e[i - 1] + innov[i - 1]
    return e


def _u(rng, lo, hi):
    return float(rng.uniform(lo, hi))


def theta_for_pattern(pattern: str, cls: str, rng: np.random.Generator) -> EABParams:
    """A planted deviation profile of the requested reaction pattern.

    Levels sit inside the class prior and the restoration lands inside the
    deceleration interval of the bundled speed profiles, so the single
    patterns read as early responses.
    """
    hi_amp = cls == "HDV"
    e0 = _u(rng, 0.95, 1.05)
    t1 = _u(rng, 20.5, 22.0)
    if pattern == "ne":
        return EABParams.from_levels([e0] * 4, _u(rng, 5.0, 20.0), [0, 0, 0])
    if pattern == "concave":
        rise = _u(rng, 0.25, 0.35)
        return EABParams.from_levels([e0, e0 + rise, e0, e0], t1,
                                     [_u(rng, 2.5, 3.2), _u(rng, 3.0, 4.2), 0.0])
    if pattern == "convex":
        dip = _u(rng, 0.25, 0.35)
        return EABParams.from_levels([e0, e0 - dip, e0, e0], t1,
                                     [_u(rng, 2.5, 3.2), _u(rng, 3.0, 4.2), 0.0])
    if pattern == "concave_convex":
        # Quick amplification, slow drift through the initial level, quick
        # recovery: the drift spreads the reversed sweep over many zones so
        # the amplification lobe keeps the dominant orientation.
        up = e0 + _u(rng, 0.27, 0.33)
        down = e0 - _u(rng, 0.15, 0.20)
        back = e0 + _u(rng, -0.02, 0.02)
        return EABParams.from_levels([e0, up, down, back], t1,
                                     [_u(rng, 2.2, 2.8), _u(rng, 8.5, 10.0), _u(rng, 1.5, 2.2)])
    if pattern == "convex_concave":
        down = e0 - _u(rng, 0.22, 0.30)
        up = e0 + _u(rng, 0.25, 0.35) if hi_amp else e0 + _u(rng, 0.20, 0.30)
        back = e0 + _u(rng, -0.02, 0.02)
        return EABParams.from_levels([e0, down, up, back], t1,
                                     [_u(rng, 2.5, 3.2), _u(rng, 4.5, 6.0), _u(rng, 2.5, 4.0)])
    if pattern == "nondecreasing":
        rise = _u(rng, 0.5, 0.8) if hi_amp else _u(rng, 0.25, 0.4)
        top = e0 + rise
        return EABParams.from_levels([e0, top, top, top], t1,
                                     [rise / _u(rng, 0.09, 0.13), 0.0, 0.0])
    if pattern == "nonincreasing":
        drop = _u(rng, 0.35, 0.5) if hi_amp else _u(rng, 0.25, 0.4)
        low = e0 - drop
        return EABParams.from_levels([e0, low, low, low], t1,
                                     [drop / _u(rng, 0.09, 0.13), 0.0, 0.0])
    raise ValueError(f"unknown pattern {pattern!r}")


def synthetic_pair(pattern: str, cls: str = "ACC", seed: int = 0,
                   noise_sigma: float = 0.0, regime: str = "median_high",
                   pair_id: str | None = None
                   ) -> tuple[CFPair, EABParams, NewellParams]:
    """One leader/follower pair from a planted pattern; returns the plant too."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(_GEN_KEY,))))
    p = ACC_PARAMS if cls == "ACC" else HDV_PARAMS
    theta = theta_for_pattern(pattern, cls, rng)
    leader = trapezoid_leader(regime, vehicle_id=f"{pattern}-L{seed}")
    follower = simulate_follower(leader, p, theta)
    x = follower.x
    if noise_sigma > 0.0:
        x = x + ar1_noise(x.size, rng, sigma=noise_sigma)
    follower = Trajectory.from_positions(f"{pattern}-F{seed}", follower.dt, follower.t, x)
    label = PairLabel(vehicle_class=cls, car_model="synthetic", speed_regime=regime)
    pid = pair_id if pair_id is not None else f"{pattern}-{cls}-{seed:03d}"
    return align_pair(leader, follower, label, pid), theta, p


@dataclass(frozen=True)
class Scenario:
    name: str
    patterns: tuple          # ((pattern, cls), ...) cycled over pairs
    regime: str = "median_high"
    n_pairs: int = 4


SCENARIOS = {sc.name: sc for sc in (
    Scenario("newell", (("ne", "ACC"),)),
    Scenario("ne_acc", (("ne", "ACC"),)),
    Scenario("concave_acc", (("concave", "ACC"),)),
    Scenario("convex_acc", (("convex", "ACC"),)),
    Scenario("concave_convex_acc", (("concave_convex", "ACC"),)),
    Scenario("nondecreasing_hdv", (("nondecreasing", "HDV"),)),
    Scenario("nonincreasing_hdv", (("nonincreasing", "HDV"),)),
    Scenario("low_concave_hdv", (("concave", "HDV"),), regime="low"),
    Scenario("mixed_fleet", (("concave", "ACC"), ("convex", "ACC"), ("ne", "ACC"),
                             ("nondecreasing", "HDV"), ("concave", "HDV"),
                             ("convex", "HDV")), n_pairs=6),
)}


def generate_dataset(scenario: str, out_dir, seed: int = 0,
                     noise_sigma: float = 0.0, n_pairs: int | None = None
                     ) -> tuple[Path, Path, Path]:
    """Write trajectories.csv, manifest.csv and truth.json for a scenario."""
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; know {sorted(SCENARIOS)}")
    sc = SCENARIOS[scenario]
    n = sc.n_pairs if n_pairs is None else int(n_pairs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trajs = []
    manifest_rows = []
    truth = {}
    for i in range(n):
        pattern, cls = sc.patterns[i % len(sc.patterns)]
        pid = f"{scenario}-{i:03d}"
        pair, theta, p = synthetic_pair(pattern, cls, seed=seed * 10_000 + i,
                                        noise_sigma=noise_sigma, regime=sc.regime,
                                        pair_id=pid)
        lead = Trajectory(f"{pid}-L", pair.leader.dt, pair.leader.t,
                          pair.leader.x, pair.leader.v)
        foll = Trajectory(f"{pid}-F", pair.follower.dt, pair.follower.t,
                          pair.follower.x, pair.follower.v)
        trajs.extend([lead, foll])
        manifest_rows.append({"pair_id": pid, "leader_id": lead.vehicle_id,
                              "follower_id": foll.vehicle_id, "vehicle_class": cls,
                              "car_model": "synthetic", "engine_mode": "normal",
                              "speed_regime": sc.regime})
        truth[pid] = {"pattern": pattern, "vehicle_class": cls,
                      "tau": p.tau, "delta": p.delta, "theta": theta.to_dict(),
                      "noise_sigma": noise_sigma}
    data_path = out / "trajectories.csv"
    manifest_path = out / "manifest.csv"
    truth_path = out / "truth.json"
    save_trajectories(trajs, data_path)
    pd.DataFrame(manifest_rows).to_csv(manifest_path, index=False)
    truth_path.write_text(json.dumps(truth, indent=2, sort_keys=True))
    return data_path, manifest_path, truth_path
