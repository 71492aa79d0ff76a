"""Monte-Carlo simulation of mixed HDV/ACC platoons behind a recorded leader."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .abc_smc import ParticlePopulation
from .eab import EABParams, NonMonotoneMappingError, SpacingCollapseError, simulate_follower
from .hysteresis import HysteresisLoop, ZONE_DT_DEFAULT, build_loop, build_zones
from .newell import NewellParams
from .trajectory import Trajectory

N_VEHICLES_DEFAULT = 20
RUNS_DEFAULT = 50
MIN_SPACING_DEFAULT = 0.5
REDRAW_LIMIT = 10

_PLATOON_KEY = 104
HDV = "HDV"
ACC = "ACC"


class PlatoonRunFailureError(RuntimeError):
    def __init__(self, run_index: int, vehicle: int, detail: str):
        super().__init__(f"run {run_index}, vehicle {vehicle}: {detail}")
        self.run_index = run_index
        self.vehicle = vehicle
        self.detail = detail


@dataclass(frozen=True)
class PlatoonSpec:
    leader: Trajectory
    penetration: float
    hdv_posterior: ParticlePopulation
    acc_posterior: ParticlePopulation
    hdv_params: NewellParams
    acc_params: NewellParams
    n_vehicles: int = N_VEHICLES_DEFAULT
    runs: int = RUNS_DEFAULT
    seed: int = 0
    zone_dt: float = ZONE_DT_DEFAULT
    min_spacing: float = MIN_SPACING_DEFAULT
    w_hysteresis: float | None = None   # default: the HDV wave speed

    def __post_init__(self):
        if self.n_vehicles < 2:
            raise ValueError("platoon needs at least 2 vehicles")
        if not 0.0 <= self.penetration <= 1.0:
            raise ValueError("penetration must lie in [0, 1]")
        if self.runs < 1:
            raise ValueError("need at least one run")

    @property
    def w(self) -> float:
        return self.hdv_params.w if self.w_hysteresis is None else self.w_hysteresis


@dataclass(frozen=True)
class PlatoonResult:
    spec: PlatoonSpec
    loops: list[HysteresisLoop]
    amplitudes: np.ndarray          # (n_ok, n_vehicles) max speed drop per vehicle
    failures: list[str]
    sample_trajectories: list[Trajectory] = field(default_factory=list)

    @property
    def n_ok(self) -> int:
        return len(self.loops)

    def mean_center(self) -> np.ndarray:
        return np.mean([lp.center for lp in self.loops], axis=0)

    def mean_sd(self) -> np.ndarray:
        return np.mean([lp.sd for lp in self.loops], axis=0)

    def magnitudes(self) -> np.ndarray:
        return np.array([lp.magnitude for lp in self.loops])


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _assign_with_rng(n: int, penetration: float, rng: np.random.Generator) -> list[str]:
    n_follow = n - 1
    n_acc = round(penetration * n_follow)
    types = [HDV] * n_follow
    for pos in rng.choice(n_follow, size=n_acc, replace=False):
        types[int(pos)] = ACC
    return types


def assign_types(n: int, penetration: float, seed: int = 0) -> list[str]:
    """Type labels for the n-1 followers: round(penetration*(n-1)) ACC slots,
    placed uniformly at random."""
    if not 0.0 <= penetration <= 1.0:
        raise ValueError("penetration must lie in [0, 1]")
    if n < 2:
        raise ValueError("need at least 2 vehicles")
    return _assign_with_rng(n, penetration, _rng(seed, _PLATOON_KEY, 0))


def _draw_theta(pop: ParticlePopulation, rng: np.random.Generator) -> EABParams:
    idx = int(rng.choice(pop.k, p=pop.weights / np.sum(pop.weights)))
    return EABParams.from_array(pop.thetas[idx])


def simulate_platoon(spec: PlatoonSpec, run_index: int
                     ) -> tuple[list[Trajectory], np.ndarray, list[str]]:
    """One seeded platoon realization.

    Followers chain sequentially; each draws its own theta from the posterior
    matching its type. Each follower's deviation clock starts at the window
    start delayed by the summed response times of the vehicles ahead of it, so
    planted deviations propagate with the wave rather than firing simultaneously.
    Spacing below spec.min_spacing aborts the run; simulation failures redraw
    theta up to a small limit.
    """
    # separate substreams so the theta sequence is unaffected by how many
    # draws the type assignment consumes (it varies with penetration)
    rng = _rng(spec.seed, _PLATOON_KEY, run_index, 2)
    types = _assign_with_rng(spec.n_vehicles, spec.penetration,
                             _rng(spec.seed, _PLATOON_KEY, run_index, 1))
    trajs = [spec.leader]
    cum_tau = 0.0
    for j, typ in enumerate(types):
        pop = spec.acc_posterior if typ == ACC else spec.hdv_posterior
        p = spec.acc_params if typ == ACC else spec.hdv_params
        prev = trajs[-1]
        follower = None
        for _ in range(REDRAW_LIMIT):
            theta = _draw_theta(pop, rng)
            try:
                follower = simulate_follower(prev, p, theta,
                                             eta_origin=spec.leader.t0 + cum_tau)
                break
            except (NonMonotoneMappingError, SpacingCollapseError, ValueError):
                follower = None
        if follower is None:
            raise PlatoonRunFailureError(run_index, j + 1,
                                         "no simulable theta within the redraw limit")
        gap = float(np.min(prev.x - follower.x))
        if gap < spec.min_spacing:
            raise PlatoonRunFailureError(run_index, j + 1,
                                         f"spacing collapsed to {gap:.3f} m")
        trajs.append(Trajectory(f"veh{j + 1:02d}-{typ}", follower.dt, follower.t,
                                follower.x, follower.v))
        cum_tau += p.tau
    amplitudes = np.array([float(tr.v[0] - np.min(tr.v)) for tr in trajs])
    return trajs, amplitudes, types


def run_platoon_batch(spec: PlatoonSpec) -> PlatoonResult:
    """spec.runs seeded realizations; failed runs are reported and excluded."""
    loops: list[HysteresisLoop] = []
    amps = []
    failures: list[str] = []
    sample: list[Trajectory] = []
    for r in range(spec.runs):
        try:
            trajs, amplitudes, _ = simulate_platoon(spec, r)
            zones = build_zones(trajs, spec.w, spec.zone_dt)
            loops.append(build_loop(zones, spec.w))
        except (PlatoonRunFailureError, ValueError) as exc:
            failures.append(f"run {r}: {exc}")
            continue
        amps.append(amplitudes)
        if not sample:
            sample = trajs
    if not loops:
        raise RuntimeError("every platoon run failed: " + "; ".join(failures[:3]))
    return PlatoonResult(spec=spec, loops=loops,
                         amplitudes=np.array(amps), failures=failures,
                         sample_trajectories=sample)


def sweep_penetration(spec: PlatoonSpec, penetrations, runs: int | None = None
                      ) -> pd.DataFrame:
    """Expectation curves vs ACC share: loop center, SDs, hysteresis magnitude."""
    rows = []
    for pen in penetrations:
        sub = replace(spec, penetration=float(pen),
                      runs=spec.runs if runs is None else int(runs))
        result = run_platoon_batch(sub)
        mags = result.magnitudes()
        center = result.mean_center()
        sd = result.mean_sd()
        se = float(np.std(mags, ddof=1) / np.sqrt(mags.size)) if mags.size > 1 else 0.0
        rows.append({"penetration": float(pen),
                     "mean_center_k": float(center[0]), "mean_center_q": float(center[1]),
                     "mean_sd_k": float(sd[0]), "mean_sd_q": float(sd[1]),
                     "mean_magnitude": float(np.mean(mags)), "se_magnitude": se,
                     "runs_ok": result.n_ok, "runs_failed": len(result.failures)})
    return pd.DataFrame(rows)
