"""Stage-1 deterministic calibration: time shift tau and space shift delta.

The follower is modeled as a pure translation of its leader, x_f(t + tau) =
x_l(t) - delta, which fixes the backward wave speed w = -delta/tau.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .trajectory import CFPair, interp_extrap

TAU_GRID = (0.5, 2.0, 0.1)     # s: start, stop (inclusive), step
DELTA_GRID = (2.0, 15.0, 1.0)  # m


@dataclass(frozen=True)
class NewellParams:
    """Calibrated shift parameters; w is derived exactly as -delta/tau."""

    tau: float
    delta: float

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    @property
    def w(self) -> float:
        return -self.delta / self.tau


@dataclass(frozen=True)
class NewellResult:
    params: NewellParams
    objective: float
    group: str = ""

    def to_dict(self) -> dict:
        return {"group": self.group, "tau": self.params.tau, "delta": self.params.delta,
                "w": self.params.w, "objective": self.objective}


def nrmse(obs: np.ndarray, sim: np.ndarray) -> float:
    """Root-mean-square error normalized by the RMS of the observation."""
    obs = np.asarray(obs, dtype=float)
    sim = np.asarray(sim, dtype=float)
    if obs.shape != sim.shape:
        raise ValueError(f"length mismatch: obs {obs.shape} vs sim {sim.shape}")
    if obs.size == 0:
        raise ValueError("empty series")
    denom = np.sqrt(np.mean(obs ** 2))
    if denom == 0.0:
        raise ValueError("all-zero observation: NRMSE undefined")
    return float(np.sqrt(np.mean((obs - sim) ** 2)) / denom)


def grid_values(grid: tuple[float, float, float]) -> np.ndarray:
    start, stop, step = grid
    if step <= 0 or stop < start:
        raise ValueError(f"bad grid {grid}")
    n = int(round((stop - start) / step))
    return start + step * np.arange(n + 1)


def calibrate_newell(pairs: list[CFPair], tau_grid: tuple = TAU_GRID,
                     delta_grid: tuple = DELTA_GRID, group: str = "") -> NewellResult:
    """Exhaustive grid search minimizing the summed position NRMSE over pairs.

    Ties resolve to the smaller tau, then the smaller delta (scan order).
    The leader is extended linearly past its window ends so every candidate
    tau is scored on the follower's full grid.
    """
    if not pairs:
        raise ValueError("no pairs to calibrate")
    taus = grid_values(tau_grid)
    deltas = grid_values(delta_grid)

    cache = [(p.t, p.leader.x, p.follower.x) for p in pairs]
    best = (np.inf, None, None)
    for tau in taus:
        shifted = [interp_extrap(t - tau, t, xl) for (t, xl, _) in cache]
        for delta in deltas:
            total = 0.0
            for (t, xl, xf), xs in zip(cache, shifted):
                total += nrmse(xf, xs - delta)
            if total < best[0] - 1e-15:
                best = (total, float(tau), float(delta))
    total, tau, delta = best
    return NewellResult(NewellParams(tau, delta), total, group)


def save_newell(results: dict[str, NewellResult], path) -> None:
    payload = {g: r.to_dict() for g, r in sorted(results.items())}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_newell(path) -> dict[str, NewellResult]:
    with open(path) as fh:
        payload = json.load(fh)
    out = {}
    for g, d in payload.items():
        out[g] = NewellResult(NewellParams(d["tau"], d["delta"]), d["objective"], d.get("group", g))
    return out
