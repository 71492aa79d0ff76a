"""Posterior validation: assignment distances, representative particles, and
distribution distance between calibrated populations."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .abc_smc import GofWeights, ParticlePopulation, PreparedPair, _gof_for_theta, prepare_pair
from .eab import EABParams, _eta_on, _simulate_x
from .newell import NewellParams
from .trajectory import CFPair

JSD_BINS = 20
JSD_MC_SAMPLES = 200_000


@dataclass(frozen=True)
class AssignmentResult:
    """Per-pair best particles and per-feature assignment distances."""

    pair_ids: list[str]
    best_index: np.ndarray        # per pair, argmin of the pair gof
    zeta_x: np.ndarray            # per pair, min over particles (m)
    zeta_eta: np.ndarray
    zeta_eta_c: np.ndarray
    ws_x: float                   # per-pair means of the minima
    ws_eta: float
    ws_eta_c: float
    ws_x_paper: float             # the same aggregates divided by K
    ws_eta_paper: float
    ws_eta_c_paper: float
    excluded: list[str]           # pairs where every particle failed to simulate

    def triple(self) -> tuple[float, float, float]:
        return (self.ws_x, self.ws_eta, self.ws_eta_c)


def _pair_features(theta: np.ndarray, prep: PreparedPair) -> tuple[float, float, float]:
    """(zeta_x, zeta_eta, zeta_eta_c) for one particle on one pair; inf on failure."""
    x_sim, err = _simulate_x(prep.t, prep.x_l, prep.tau, prep.delta, theta, prep.origin)
    if err:
        return (math.inf, math.inf, math.inf)
    eta_sim = _eta_on(theta, prep.eta_rel_t)
    crit = [prep.i_max, prep.i_min, int(np.argmax(np.abs(eta_sim - prep.eta_obs)))]
    zx = float(np.sqrt(np.mean((x_sim - prep.x_obs) ** 2)))
    ze = float(np.sqrt(np.mean((eta_sim - prep.eta_obs) ** 2)))
    zc = float(np.sqrt(np.mean((eta_sim[crit] - prep.eta_obs[crit]) ** 2)))
    return (zx, ze, zc)


def ws_metric(pop: ParticlePopulation, pairs, p: NewellParams,
              cw: GofWeights = GofWeights()) -> AssignmentResult:
    """Assign each pair its best particle and aggregate the per-feature minima.

    Features are plain RMS distances (position in meters, deviation and
    critical-deviation dimensionless). The aggregate is the mean over pairs of
    the per-pair minimum; the *_paper variants additionally divide by the
    population size.
    """
    if pop.k == 0 or not pairs:
        raise ValueError("need a non-empty population and at least one pair")
    prepared = [pp if isinstance(pp, PreparedPair) else prepare_pair(pp, p) for pp in pairs]
    ids, best, zx, ze, zc, excluded = [], [], [], [], [], []
    for prep in prepared:
        feats = np.array([_pair_features(pop.thetas[i], prep) for i in range(pop.k)])
        if not np.any(np.isfinite(feats[:, 0])):
            excluded.append(prep.pair_id)
            continue
        gofs = np.array([_gof_for_theta(pop.thetas[i], prep, cw) for i in range(pop.k)])
        ids.append(prep.pair_id)
        best.append(int(np.argmin(gofs)))
        zx.append(float(np.min(feats[:, 0])))
        ze.append(float(np.min(feats[:, 1])))
        zc.append(float(np.min(feats[:, 2])))
    if not ids:
        raise ValueError("every pair was excluded: no particle simulates any of them")
    zx, ze, zc = np.array(zx), np.array(ze), np.array(zc)
    wx, we, wc = float(np.mean(zx)), float(np.mean(ze)), float(np.mean(zc))
    return AssignmentResult(pair_ids=ids, best_index=np.array(best, dtype=int),
                            zeta_x=zx, zeta_eta=ze, zeta_eta_c=zc,
                            ws_x=wx, ws_eta=we, ws_eta_c=wc,
                            ws_x_paper=wx / pop.k, ws_eta_paper=we / pop.k,
                            ws_eta_c_paper=wc / pop.k, excluded=excluded)


def select_representative(pop: ParticlePopulation, pair, p: NewellParams,
                          cw: GofWeights = GofWeights()) -> dict[str, EABParams]:
    """Three reference particles for one pair.

    best_fit minimizes this pair's gof; p5 sits at the 5th percentile of this
    pair's gof ranking; deterministic_optimal minimizes the stored
    population-level (training-mean) gof.
    """
    if pop.k < 20:
        raise ValueError("representative selection needs at least 20 particles")
    prep = pair if isinstance(pair, PreparedPair) else prepare_pair(pair, p)
    gofs = np.array([_gof_for_theta(pop.thetas[i], prep, cw) for i in range(pop.k)])
    order = np.lexsort((np.arange(pop.k), gofs))
    i_best = int(order[0])
    i_p5 = int(order[int(round(0.05 * (pop.k - 1)))])
    i_det = int(np.argmin(pop.gofs))
    return {"best_fit": EABParams.from_array(pop.thetas[i_best]),
            "p5": EABParams.from_array(pop.thetas[i_p5]),
            "deterministic_optimal": EABParams.from_array(pop.thetas[i_det])}


def _marginal_histograms(a: ParticlePopulation, b: ParticlePopulation,
                         bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-component histogram probabilities on shared union-support edges."""
    pa = np.empty((8, bins))
    pb = np.empty((8, bins))
    for j in range(8):
        lo = min(float(np.min(a.thetas[:, j])), float(np.min(b.thetas[:, j])))
        hi = max(float(np.max(a.thetas[:, j])), float(np.max(b.thetas[:, j])))
        if hi <= lo:
            pad = max(1e-9, abs(lo) * 1e-9)
            lo, hi = lo - pad, hi + pad
        edges = np.linspace(lo, hi, bins + 1)
        ca, _ = np.histogram(a.thetas[:, j], bins=edges, weights=a.weights)
        cb, _ = np.histogram(b.thetas[:, j], bins=edges, weights=b.weights)
        pa[j] = ca / np.sum(ca)
        pb[j] = cb / np.sum(cb)
    return pa, pb


def _content_key(pop: ParticlePopulation) -> bytes:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(pop.thetas).tobytes())
    h.update(np.ascontiguousarray(pop.weights).tobytes())
    return h.digest()


def _half_divergence(log_p: np.ndarray, log_q: np.ndarray, idx: np.ndarray) -> float:
    """Mean over samples of log2(2 P / (P + Q)) at cells drawn from P."""
    lp = np.sum(np.take_along_axis(log_p, idx, axis=1), axis=0)
    lq = np.sum(np.take_along_axis(log_q, idx, axis=1), axis=0)
    ratio = np.exp(np.clip(lq - lp, -745.0, 700.0))   # Q/P per sampled cell
    return float(np.mean(1.0 - np.log1p(ratio) / math.log(2.0)))


def jsd(pop_a: ParticlePopulation, pop_b: ParticlePopulation, bins: int = JSD_BINS,
        mc_samples: int = JSD_MC_SAMPLES) -> float:
    """Jensen–Shannon distance between two particle populations in [0, 1].

    The joint densities are approximated as products of per-component
    histograms on a shared union-support grid; the two Kullback–Leibler halves
    are estimated by Monte Carlo over cells drawn from each product
    distribution. The sample stream is seeded from a content hash with the
    operands in a canonical order, so the result is deterministic and exactly
    symmetric. Base-2 logs and the square root put the value in [0, 1].
    """
    if pop_a.thetas.shape[1] != pop_b.thetas.shape[1]:
        raise ValueError("populations must share the parameter dimension")
    ka, kb = _content_key(pop_a), _content_key(pop_b)
    if ka == kb:
        return 0.0
    if kb < ka:
        pop_a, pop_b = pop_b, pop_a
        ka, kb = kb, ka
    pa, pb = _marginal_histograms(pop_a, pop_b, bins)
    with np.errstate(divide="ignore"):
        log_pa = np.log(pa)
        log_pb = np.log(pb)
    seed = int.from_bytes(hashlib.sha256(ka + kb).digest()[:8], "big")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    def draw(probs: np.ndarray) -> np.ndarray:
        # inverse-CDF per component: (8, mc_samples) bin indices
        cdf = np.cumsum(probs, axis=1)
        cdf[:, -1] = 1.0
        u = rng.random((8, mc_samples))
        idx = np.empty((8, mc_samples), dtype=np.int64)
        for j in range(8):
            idx[j] = np.searchsorted(cdf[j], u[j], side="right")
        return np.minimum(idx, bins - 1)

    idx_a = draw(pa)
    idx_b = draw(pb)
    half_a = _half_divergence(log_pa, log_pb, idx_a)
    half_b = _half_divergence(log_pb, log_pa, idx_b)
    js2 = max(0.0, 0.5 * half_a + 0.5 * half_b)
    return float(math.sqrt(min(js2, 1.0)))
