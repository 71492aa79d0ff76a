"""Run configuration: one JSON-serializable object holding every knob the
batch pipeline needs, validated before any compute starts."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .abc_smc import GofWeights, PriorSpec
from .eab import DELTA_ETA_T_ACC, DELTA_ETA_T_HDV
from .hysteresis import THRESHOLDS_LOW, THRESHOLDS_MEDIAN_HIGH
from .newell import DELTA_GRID, TAU_GRID


@dataclass
class RunConfig:
    trajectories: str = ""
    manifest: str = ""
    out_dir: str = "out"
    seed: int = 0
    dt: float | None = None            # resample target; None keeps the file grid
    schema: dict = field(default_factory=dict)
    train_frac: float = 0.75

    tau_grid: tuple = TAU_GRID
    delta_grid: tuple = DELTA_GRID

    k_particles: int = 500
    lam: float = 0.95
    gamma0_quantile: float = 0.95      # effective quantile is max(lam, this)
    rho_stop: float = 0.01
    max_iter: int = 150
    gof_weights: tuple = (0.4, 0.4, 0.2)
    prior_eta: dict = field(default_factory=lambda: {"ACC": (0.5, 1.5), "HDV": (0.3, 3.0)})
    prior_eps: tuple = (-0.15, 0.15)
    prior_t1: tuple = (0.0, 25.0)

    delta_eta_t: dict = field(default_factory=lambda: {"ACC": DELTA_ETA_T_ACC,
                                                       "HDV": DELTA_ETA_T_HDV})
    restore_time: float = 2.0

    zone_dt: float = 3.0
    smooth_loops: bool = True
    hysteresis_thresholds: dict = field(default_factory=lambda: {
        "median_high": tuple(THRESHOLDS_MEDIAN_HIGH), "low": tuple(THRESHOLDS_LOW)})

    platoon_vehicles: int = 20
    platoon_runs: int = 50
    penetrations: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    min_spacing: float = 0.5
    posterior_samples: int = 200

    make_plots: bool = True

    def validate(self) -> "RunConfig":
        gw = self.gof_weights
        if len(gw) != 3:
            raise ValueError("gof_weights needs exactly three entries")
        GofWeights(*gw)   # raises on bad weights
        if self.k_particles < 2:
            raise ValueError("k_particles must be at least 2")
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lam must lie in (0, 1)")
        if not 0.0 < self.gamma0_quantile < 1.0:
            raise ValueError("gamma0_quantile must lie in (0, 1)")
        if self.rho_stop <= 0 or self.max_iter < 0:
            raise ValueError("rho_stop must be positive and max_iter nonnegative")
        if not 0.0 < self.train_frac <= 1.0:
            raise ValueError("train_frac must lie in (0, 1]")
        for lo, hi, step in (self.tau_grid, self.delta_grid):
            if not (lo > 0 and hi > lo and step > 0):
                raise ValueError("stage-1 grids need 0 < lo < hi and step > 0")
        for cls, bounds in self.prior_eta.items():
            PriorSpec(eta_lo=bounds[0], eta_hi=bounds[1],
                      eps_lo=self.prior_eps[0], eps_hi=self.prior_eps[1],
                      t1_lo=self.prior_t1[0], t1_hi=self.prior_t1[1])
        for cls, thr in self.delta_eta_t.items():
            if thr <= 0:
                raise ValueError(f"delta_eta_t[{cls}] must be positive")
        if self.zone_dt <= 0:
            raise ValueError("zone_dt must be positive")
        for regime, thr in self.hysteresis_thresholds.items():
            if len(thr) != 3 or any(v < 0 for v in thr):
                raise ValueError(f"thresholds[{regime}] needs three nonnegative values")
        if self.platoon_vehicles < 2 or self.platoon_runs < 1:
            raise ValueError("platoon needs >= 2 vehicles and >= 1 run")
        if any(not 0.0 <= p <= 1.0 for p in self.penetrations):
            raise ValueError("penetrations must lie in [0, 1]")
        if self.min_spacing < 0 or self.posterior_samples < 1:
            raise ValueError("bad platoon spacing or sample count")
        if self.restore_time <= 0:
            raise ValueError("restore_time must be positive")
        return self

    def prior_for(self, vehicle_class: str) -> PriorSpec:
        lo, hi = self.prior_eta.get(vehicle_class, self.prior_eta["HDV"])
        return PriorSpec(eta_lo=lo, eta_hi=hi,
                         eps_lo=self.prior_eps[0], eps_hi=self.prior_eps[1],
                         t1_lo=self.prior_t1[0], t1_hi=self.prior_t1[1])

    def weights(self) -> GofWeights:
        return GofWeights(*self.gof_weights)

    def delta_eta_for(self, vehicle_class: str) -> float:
        return self.delta_eta_t.get(vehicle_class, DELTA_ETA_T_HDV)

    def thresholds_for(self, speed_regime: str) -> tuple[float, float, float]:
        thr = self.hysteresis_thresholds.get(speed_regime,
                                             self.hysteresis_thresholds["median_high"])
        return (float(thr[0]), float(thr[1]), float(thr[2]))

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(raw)
        for key in ("tau_grid", "delta_grid", "gof_weights", "prior_eps", "prior_t1",
                    "penetrations"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        if "prior_eta" in kwargs:
            kwargs["prior_eta"] = {k: tuple(v) for k, v in kwargs["prior_eta"].items()}
        if "hysteresis_thresholds" in kwargs:
            kwargs["hysteresis_thresholds"] = {k: tuple(v) for k, v
                                               in kwargs["hysteresis_thresholds"].items()}
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
