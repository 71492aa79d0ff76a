"""Adaptive sequential Monte Carlo ABC for the deviation-profile parameters.

Particles are 8-vectors theta = (eta0..eta3, eps0..eps2, t1). Each iteration
tightens the tolerance to the lambda-quantile of current goodness-of-fit
values, keeps the particles at or below it, and refills the rest by a Gaussian
random-walk kernel around resampled survivors, accepting only proposals whose
gof stays within the tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .eab import EABParams, _eta_on, _simulate_x, measure_eta, theta_valid_mask
from .newell import NewellParams
from .trajectory import CFPair

K_DESK = 500
K_FULL = 20000
LAMBDA_DEFAULT = 0.95
RHO_STOP_DEFAULT = 0.01
MAX_ITER_DEFAULT = 150
CAP_FACTOR = 50            # proposal budget per iteration = CAP_FACTOR * n_dead
VAR_FLOOR = 1e-8

_INIT_KEY = 101
_ITER_KEY = 102
_SAMPLE_KEY = 103


class ProposalCapExhaustedError(RuntimeError):
    """The per-iteration proposal budget ran out before the refill completed."""

    def __init__(self, filled: int, missing: int, rho: float):
        super().__init__(
            f"proposal budget exhausted: {filled} slots filled, {missing} missing, rho={rho:.4f}")
        self.filled = filled
        self.missing = missing
        self.rho = rho


@dataclass(frozen=True)
class GofWeights:
    c1: float = 0.4   # position trace
    c2: float = 0.4   # deviation trace
    c3: float = 0.2   # critical deviation points

    def __post_init__(self):
        c = (self.c1, self.c2, self.c3)
        if any(v < 0 for v in c):
            raise ValueError("gof weights must be nonnegative")
        if abs(sum(c) - 1.0) > 1e-9:
            raise ValueError("gof weights must sum to 1")


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform box prior: shared bounds per block."""

    eta_lo: float
    eta_hi: float
    eps_lo: float = -0.15
    eps_hi: float = 0.15
    t1_lo: float = 0.0
    t1_hi: float = 25.0

    def __post_init__(self):
        for lo, hi, name in ((self.eta_lo, self.eta_hi, "eta"),
                             (self.eps_lo, self.eps_hi, "eps"),
                             (self.t1_lo, self.t1_hi, "t1")):
            if not lo < hi:
                raise ValueError(f"{name} bounds need lo < hi")
        if self.eta_lo <= 0:
            raise ValueError("eta levels must stay positive")

    @classmethod
    def acc_default(cls) -> "PriorSpec":
        return cls(eta_lo=0.5, eta_hi=1.5)

    @classmethod
    def hdv_default(cls) -> "PriorSpec":
        return cls(eta_lo=0.3, eta_hi=3.0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.eta_lo] * 4 + [self.eps_lo] * 3 + [self.t1_lo])
        hi = np.array([self.eta_hi] * 4 + [self.eps_hi] * 3 + [self.t1_hi])
        return lo, hi

    def iqr(self) -> np.ndarray:
        """Component-wise interquartile range of the box prior."""
        lo, hi = self.bounds()
        return (hi - lo) / 2.0

    def contains(self, thetas: np.ndarray) -> np.ndarray:
        th = np.atleast_2d(np.asarray(thetas, dtype=float))
        lo, hi = self.bounds()
        return np.all((th >= lo) & (th <= hi), axis=1)

    def sample_valid(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n structurally valid draws (box draws conditioned on sign consistency)."""
        out = np.empty((n, 8))
        lo, hi = self.bounds()
        have = 0
        while have < n:
            batch = rng.uniform(lo, hi, size=(max(64, 2 * (n - have) * 8), 8))
            ok = batch[theta_valid_mask(batch)]
            take = min(n - have, ok.shape[0])
            out[have:have + take] = ok[:take]
            have += take
        return out


@dataclass(frozen=True)
class Particle:
    theta: EABParams
    gof: float
    weight: float

    def __post_init__(self):
        if self.gof < 0:
            raise ValueError("gof must be nonnegative")
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")


@dataclass(frozen=True)
class ParticlePopulation:
    thetas: np.ndarray       # (K, 8)
    gofs: np.ndarray         # (K,)
    weights: np.ndarray      # (K,)
    iteration: int
    tolerance: float
    acceptance: float
    seed: int

    def __post_init__(self):
        k = self.thetas.shape[0]
        if self.thetas.shape != (k, 8) or self.gofs.shape != (k,) or self.weights.shape != (k,):
            raise ValueError("inconsistent population array shapes")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")

    @property
    def k(self) -> int:
        return self.thetas.shape[0]

    def particle(self, i: int) -> Particle:
        return Particle(EABParams.from_array(self.thetas[i]),
                        float(self.gofs[i]), float(self.weights[i]))

    @property
    def particles(self) -> list[Particle]:
        return [self.particle(i) for i in range(self.k)]


@dataclass(frozen=True)
class DiagnosticsTrace:
    iterations: np.ndarray
    gammas: np.ndarray
    rhos: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"iteration": self.iterations.astype(int),
                             "gamma": self.gammas, "rho": self.rhos})


@dataclass(frozen=True)
class PreparedPair:
    """Per-pair caches reused across every particle evaluation."""

    pair_id: str
    t: np.ndarray
    x_l: np.ndarray
    x_obs: np.ndarray
    rms_x: float
    eta_rel_t: np.ndarray    # measured-eta timestamps relative to the eta clock origin
    eta_obs: np.ndarray
    rms_eta: float
    i_max: int
    i_min: int
    origin: float
    tau: float
    delta: float


def prepare_pair(pair: CFPair, p: NewellParams) -> PreparedPair:
    series = measure_eta(pair, p)
    t = pair.leader.t
    x_obs = pair.follower.x
    origin = pair.leader.t0
    return PreparedPair(
        pair_id=pair.pair_id, t=t, x_l=pair.leader.x, x_obs=x_obs,
        rms_x=float(np.sqrt(np.mean(x_obs ** 2))),
        eta_rel_t=series.t - origin, eta_obs=series.eta,
        rms_eta=float(np.sqrt(np.mean(series.eta ** 2))),
        i_max=int(np.argmax(series.eta)), i_min=int(np.argmin(series.eta)),
        origin=origin, tau=p.tau, delta=p.delta)


def _nrmse_cached(diff: np.ndarray, rms: float) -> float:
    return float(np.sqrt(np.mean(diff ** 2)) / rms)


def gof_eab(sim: tuple[np.ndarray, np.ndarray], obs: tuple[np.ndarray, np.ndarray],
            cw: GofWeights = GofWeights()) -> float:
    """Weighted NRMSE over aligned position and deviation series.

    The third term scores three critical samples: the observed deviation's
    maximum, its minimum, and the sample of largest sim-obs disagreement.
    """
    x_sim, eta_sim = (np.asarray(a, dtype=float) for a in sim)
    x_obs, eta_obs = (np.asarray(a, dtype=float) for a in obs)
    if x_sim.shape != x_obs.shape or eta_sim.shape != eta_obs.shape:
        raise ValueError("sim and obs series must be aligned")
    rms_x = float(np.sqrt(np.mean(x_obs ** 2)))
    rms_eta = float(np.sqrt(np.mean(eta_obs ** 2)))
    if rms_x == 0.0 or rms_eta == 0.0:
        raise ValueError("all-zero observed series")
    crit = [int(np.argmax(eta_obs)), int(np.argmin(eta_obs)),
            int(np.argmax(np.abs(eta_sim - eta_obs)))]
    obs_c = eta_obs[crit]
    rms_c = float(np.sqrt(np.mean(obs_c ** 2)))
    return (cw.c1 * _nrmse_cached(x_sim - x_obs, rms_x)
            + cw.c2 * _nrmse_cached(eta_sim - eta_obs, rms_eta)
            + cw.c3 * _nrmse_cached(eta_sim[crit] - obs_c, rms_c))


def _gof_for_theta(theta: np.ndarray, prep: PreparedPair, cw: GofWeights) -> float:
    x_sim, err = _simulate_x(prep.t, prep.x_l, prep.tau, prep.delta, theta, prep.origin)
    if err:
        return math.inf
    eta_sim = _eta_on(theta, prep.eta_rel_t)
    crit = [prep.i_max, prep.i_min, int(np.argmax(np.abs(eta_sim - prep.eta_obs)))]
    obs_c = prep.eta_obs[crit]
    rms_c = float(np.sqrt(np.mean(obs_c ** 2)))
    return (cw.c1 * _nrmse_cached(x_sim - prep.x_obs, prep.rms_x)
            + cw.c2 * _nrmse_cached(eta_sim - prep.eta_obs, prep.rms_eta)
            + cw.c3 * _nrmse_cached(eta_sim[crit] - obs_c, rms_c))


def evaluate_gofs(thetas: np.ndarray, prepared: list[PreparedPair],
                  cw: GofWeights = GofWeights()) -> np.ndarray:
    """Mean gof over pairs, one value per theta row; failures give +inf."""
    if not prepared:
        raise ValueError("no pairs to evaluate against")
    out = np.empty(thetas.shape[0])
    for i in range(thetas.shape[0]):
        out[i] = float(np.mean([_gof_for_theta(thetas[i], pp, cw) for pp in prepared]))
    return out


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _quantile_gamma(gofs: np.ndarray, q: float) -> float:
    k = gofs.size
    n_keep = min(max(int(round(q * k)), 1), k - 1)
    return float(np.sort(gofs)[n_keep - 1])


def init_population(prior: PriorSpec, k: int, gamma0: float = math.inf,
                    seed: int = 0) -> ParticlePopulation:
    """K structurally valid prior draws, uniform weights, iteration 0.

    Gof values are +inf placeholders until evaluated against data.
    """
    if k < 2:
        raise ValueError("population needs K >= 2")
    thetas = prior.sample_valid(k, _rng(seed, _INIT_KEY))
    return ParticlePopulation(thetas=thetas, gofs=np.full(k, math.inf),
                              weights=np.full(k, 1.0 / k), iteration=0,
                              tolerance=float(gamma0), acceptance=1.0, seed=seed)


def asmc_iterate(pop: ParticlePopulation, data, p: NewellParams,
                 cw: GofWeights = GofWeights(), lam: float = LAMBDA_DEFAULT,
                 prior: PriorSpec | None = None,
                 pad_on_cap: bool = True) -> ParticlePopulation:
    """One tolerance-tightening step.

    The new tolerance is the lam-quantile (order statistic) of current gofs;
    every particle at or below it survives, the rest are refilled by
    resampling survivors and adding per-component Gaussian noise with
    variance 2*var(survivor marginals) (floored). Draws that leave the prior
    box carry zero prior density: they are discarded pre-simulation and
    redrawn without entering the acceptance ratio. In-box draws count as
    proposals: sign-inconsistent ones carry infinite gof and are rejected
    outright, the rest are simulated and kept only if their gof stays within
    the tolerance; rho is accepted/proposed. The proposal budget is CAP_FACTOR
    times the number of open slots; if it (or the raw-draw guard) runs out,
    open slots are padded with unperturbed parents (or, with pad_on_cap=False,
    the step raises and reports the partial fill).
    """
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must be in (0, 1)")
    if prior is None:
        raise ValueError("asmc_iterate needs the prior for support checks")
    prepared = [pp if isinstance(pp, PreparedPair) else prepare_pair(pp, p) for pp in data]

    gamma = _quantile_gamma(pop.gofs, lam)
    alive = np.flatnonzero(np.isfinite(pop.gofs) & (pop.gofs <= gamma))
    if alive.size == 0:
        raise RuntimeError("no particles within tolerance; gofs may all be infinite")
    dead = np.setdiff1d(np.arange(pop.k), alive, assume_unique=True)

    new_thetas = pop.thetas.copy()
    new_gofs = pop.gofs.copy()
    n_dead = dead.size
    if n_dead == 0:
        # degenerate: everything already within tolerance, nothing to propose
        return replace(pop, iteration=pop.iteration + 1, tolerance=gamma, acceptance=1.0,
                       weights=np.full(pop.k, 1.0 / pop.k))

    std = np.sqrt(np.maximum(2.0 * np.var(pop.thetas[alive], axis=0), VAR_FLOOR))
    lo, hi = prior.bounds()
    rng = _rng(pop.seed, _ITER_KEY, pop.iteration + 1)
    budget = CAP_FACTOR * n_dead          # in-box proposals
    draw_guard = 4000 * budget            # raw draws, guards kernel stalls
    proposed = 0
    accepted = 0
    drawn = 0
    filled = 0
    chunk = max(32, 4 * n_dead)
    while filled < n_dead and proposed < budget and drawn < draw_guard:
        parents = pop.thetas[alive[rng.integers(alive.size, size=chunk)]]
        cands = parents + rng.standard_normal((chunk, 8)) * std
        drawn += chunk
        in_box = np.flatnonzero(np.all(cands >= lo, axis=1) & np.all(cands <= hi, axis=1))
        if in_box.size == 0:
            chunk = min(2 * chunk, 65536)
            continue
        valid = theta_valid_mask(cands[in_box])
        for cand, is_valid in zip(cands[in_box], valid):
            proposed += 1
            if is_valid:
                g = float(np.mean([_gof_for_theta(cand, pp, cw) for pp in prepared]))
                if g <= gamma:
                    new_thetas[dead[filled]] = cand
                    new_gofs[dead[filled]] = g
                    accepted += 1
                    filled += 1
            if filled == n_dead or proposed == budget:
                break
    rho = accepted / proposed if proposed else 0.0
    if filled < n_dead:
        if not pad_on_cap:
            raise ProposalCapExhaustedError(filled, n_dead - filled, rho)
        pad_rng_vals = rng.integers(alive.size, size=n_dead - filled)
        for slot, j in zip(dead[filled:], pad_rng_vals):
            src = alive[int(j)]
            new_thetas[slot] = pop.thetas[src]
            new_gofs[slot] = pop.gofs[src]
    return ParticlePopulation(thetas=new_thetas, gofs=new_gofs,
                              weights=np.full(pop.k, 1.0 / pop.k),
                              iteration=pop.iteration + 1, tolerance=gamma,
                              acceptance=rho, seed=pop.seed)


def run_calibration(training, prior: PriorSpec, p: NewellParams,
                    k: int = K_DESK, lam: float = LAMBDA_DEFAULT,
                    rho_stop: float = RHO_STOP_DEFAULT, max_iter: int = MAX_ITER_DEFAULT,
                    seed: int = 0, cw: GofWeights = GofWeights()
                    ) -> tuple[ParticlePopulation, DiagnosticsTrace]:
    """Full adaptive run: init, evaluate, iterate until rho < rho_stop or max_iter."""
    prepared = [pp if isinstance(pp, PreparedPair) else prepare_pair(pp, p) for pp in training]
    pop = init_population(prior, k, seed=seed)
    gofs = evaluate_gofs(pop.thetas, prepared, cw)
    gamma0 = _quantile_gamma(gofs, max(lam, 0.95))
    pop = replace(pop, gofs=gofs, tolerance=gamma0)
    iters = [0]
    gammas = [gamma0]
    rhos = [1.0]
    for _ in range(max_iter):
        pop = asmc_iterate(pop, prepared, p, cw=cw, lam=lam, prior=prior)
        iters.append(pop.iteration)
        gammas.append(pop.tolerance)
        rhos.append(pop.acceptance)
        if pop.acceptance < rho_stop:
            break
    trace = DiagnosticsTrace(np.array(iters), np.array(gammas), np.array(rhos))
    return pop, trace


def sample_posterior(pop: ParticlePopulation, n: int, seed: int = 0) -> list[EABParams]:
    if pop.k == 0:
        raise ValueError("empty population")
    if n < 1:
        raise ValueError("need n >= 1")
    rng = _rng(seed, _SAMPLE_KEY)
    idx = rng.choice(pop.k, size=n, replace=True, p=pop.weights / np.sum(pop.weights))
    return [EABParams.from_array(pop.thetas[i]) for i in idx]


def posterior_quantiles(pop: ParticlePopulation, qs) -> np.ndarray:
    """Weighted per-component quantiles of theta; shape (len(qs), 8)."""
    order = np.argsort(pop.thetas, axis=0)
    out = np.empty((len(qs), 8))
    for j in range(8):
        col = pop.thetas[order[:, j], j]
        w = pop.weights[order[:, j]]
        cum = np.cumsum(w)
        cum /= cum[-1]
        out[:, j] = np.interp(qs, cum, col)
    return out


def save_posterior(pop: ParticlePopulation, path) -> None:
    from .eab import THETA_FIELDS
    df = pd.DataFrame(pop.thetas, columns=list(THETA_FIELDS))
    df["gof"] = pop.gofs
    df["weight"] = pop.weights
    df.to_csv(path, index=False, float_format="%.12g")


def load_posterior(path, iteration: int = -1, tolerance: float = math.nan,
                   acceptance: float = math.nan, seed: int = 0) -> ParticlePopulation:
    from .eab import THETA_FIELDS
    df = pd.read_csv(path)
    thetas = df[list(THETA_FIELDS)].to_numpy(dtype=float)
    return ParticlePopulation(thetas=thetas, gofs=df["gof"].to_numpy(dtype=float),
                              weights=df["weight"].to_numpy(dtype=float),
                              iteration=iteration, tolerance=tolerance,
                              acceptance=acceptance, seed=seed)


def save_diagnostics(trace: DiagnosticsTrace, path) -> None:
    trace.to_frame().to_csv(path, index=False, float_format="%.12g")
