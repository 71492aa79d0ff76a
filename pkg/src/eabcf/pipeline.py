"""Batch pipeline: response-time fitting, posterior calibration, validation,
pattern and hysteresis tables, and the mixed-platoon sweep, emitted as a
reproducible artifact bundle."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .abc_smc import (DiagnosticsTrace, ParticlePopulation, prepare_pair, run_calibration,
                      save_diagnostics, save_posterior)
from .config import RunConfig
from .eab import classify_pattern, measure_eta, simulate_follower
from .hysteresis import build_loop, build_zones, classify_hysteresis, compare_hysteresis
from .newell import NewellResult, calibrate_newell, save_newell
from .platoon import PlatoonSpec, sweep_penetration
from .trajectory import CFPair, detect_phases, load_trajectories
from .validation import jsd, select_representative, ws_metric

_SPLIT_KEY = 106


class PipelineStageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[stage {stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def _sanitize(group: str) -> str:
    return group.replace(":", "_").replace("/", "_")


def _pyify(obj):
    """Recursively convert numpy scalars/arrays so json can serialize them."""
    if isinstance(obj, dict):
        return {str(k): _pyify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_pyify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_pyify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def split_pairs(pairs: list[CFPair], train_frac: float, seed: int,
                group_index: int = 0) -> tuple[list[CFPair], list[CFPair]]:
    """Seeded train/test split of one group, at least one test pair when n >= 2."""
    ordered = sorted(pairs, key=lambda pr: pr.pair_id)
    n = len(ordered)
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=(_SPLIT_KEY, group_index))))
    perm = rng.permutation(n)
    n_train = min(max(int(round(train_frac * n)), 1), n)
    if n >= 2 and n_train == n:
        n_train = n - 1
    train_idx = sorted(perm[:n_train])
    test_idx = sorted(perm[n_train:])
    return [ordered[i] for i in train_idx], [ordered[i] for i in test_idx]


@dataclass
class GroupArtifacts:
    key: str
    pairs: list[CFPair]
    train: list[CFPair]
    test: list[CFPair]
    newell: NewellResult
    population: ParticlePopulation
    trace: DiagnosticsTrace


def _group_pairs(pairs: list[CFPair]) -> dict[str, list[CFPair]]:
    groups: dict[str, list[CFPair]] = {}
    for pair in pairs:
        groups.setdefault(pair.label.group_key(), []).append(pair)
    return {k: sorted(v, key=lambda pr: pr.pair_id) for k, v in sorted(groups.items())}


def _loop_for(pair: CFPair, w: float, zone_dt: float, smooth: bool):
    zones = build_zones([pair.leader, pair.follower], w, zone_dt)
    return build_loop(zones, w, smooth=smooth)


def _aligned_loops(leader, follow_obs, follow_sim, w: float, zone_dt: float,
                   smooth: bool):
    """Observed and simulated loops on the shared anchor set, or None.

    The two followers may admit valid wave crossings for slightly different
    anchor ranges near the record edges; comparing cross-product series needs
    one zone per anchor on both sides.
    """
    z_obs = build_zones([leader, follow_obs], w, zone_dt)
    z_sim = build_zones([leader, follow_sim], w, zone_dt)
    common = {z.index for z in z_obs} & {z.index for z in z_sim}
    if len(common) < 4:
        return None
    zo = [z for z in z_obs if z.index in common]
    zs = [z for z in z_sim if z.index in common]
    return (build_loop(zo, w, smooth=smooth), build_loop(zs, w, smooth=smooth))


def run_pipeline(cfg: RunConfig) -> dict:
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    report: dict = {"groups": {}}

    try:
        pairs = load_trajectories(cfg.trajectories, cfg.manifest,
                                  schema=cfg.schema or None, dt=cfg.dt)
    except Exception as exc:
        raise PipelineStageError("load", exc) from exc
    groups = _group_pairs(pairs)

    artifacts: dict[str, GroupArtifacts] = {}
    for gi, (key, members) in enumerate(groups.items()):
        cls = members[0].label.vehicle_class
        try:
            nres = calibrate_newell(members, cfg.tau_grid, cfg.delta_grid, group=key)
        except Exception as exc:
            raise PipelineStageError("newell", exc) from exc
        train, test = split_pairs(members, cfg.train_frac, cfg.seed, group_index=gi)
        try:
            pop, trace = run_calibration(train, cfg.prior_for(cls), nres.params,
                                         k=cfg.k_particles, lam=cfg.lam,
                                         rho_stop=cfg.rho_stop, max_iter=cfg.max_iter,
                                         seed=cfg.seed, cw=cfg.weights())
        except Exception as exc:
            raise PipelineStageError("calibrate-eab", exc) from exc
        tag = _sanitize(key)
        save_posterior(pop, out / f"posterior_{tag}.csv")
        save_diagnostics(trace, out / f"diagnostics_{tag}.csv")
        artifacts[key] = GroupArtifacts(key, members, train, test, nres, pop, trace)
        report["groups"][key] = {
            "vehicle_class": cls,
            "n_pairs": len(members), "n_train": len(train), "n_test": len(test),
            "newell": nres.to_dict(),
            "gamma_trace": list(trace.gammas), "rho_trace": list(trace.rhos),
        }

    try:
        _stage_validate(cfg, artifacts, out, report)
    except Exception as exc:
        raise PipelineStageError("validate", exc) from exc
    try:
        _stage_classify(cfg, artifacts, out, report)
    except Exception as exc:
        raise PipelineStageError("classify", exc) from exc
    try:
        _stage_hysteresis(cfg, artifacts, out, report)
    except Exception as exc:
        raise PipelineStageError("hysteresis", exc) from exc
    try:
        _stage_platoon(cfg, artifacts, out, report)
    except PipelineStageError:
        raise
    except Exception as exc:
        raise PipelineStageError("platoon", exc) from exc

    report = _pyify(report)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if cfg.make_plots:
        from . import plots
        plots.emit_all(cfg, artifacts, out)
    return report


def _stage_validate(cfg: RunConfig, artifacts, out: Path, report: dict) -> None:
    rows = []
    for key, art in artifacts.items():
        entry = report["groups"][key]
        for split_name, subset in (("train", art.train), ("test", art.test)):
            if not subset:
                continue
            res = ws_metric(art.population, subset, art.newell.params, cw=cfg.weights())
            entry[f"ws_{split_name}"] = {
                "zeta_x": res.ws_x, "zeta_eta": res.ws_eta, "zeta_eta_c": res.ws_eta_c,
                "zeta_x_paper": res.ws_x_paper, "zeta_eta_paper": res.ws_eta_paper,
                "zeta_eta_c_paper": res.ws_eta_c_paper, "excluded": res.excluded}
            for i, pid in enumerate(res.pair_ids):
                rows.append({"group": key, "split": split_name, "pair_id": pid,
                             "best_particle": int(res.best_index[i]),
                             "zeta_x": res.zeta_x[i], "zeta_eta": res.zeta_eta[i],
                             "zeta_eta_c": res.zeta_eta_c[i]})
    pd.DataFrame(rows).to_csv(out / "validation.csv", index=False, float_format="%.12g")

    keys = sorted(artifacts)
    matrix = {a: {b: (0.0 if a == b else
                      jsd(artifacts[a].population, artifacts[b].population))
                  for b in keys} for a in keys}
    (out / "jsd.json").write_text(json.dumps(_pyify(matrix), indent=2, sort_keys=True) + "\n")
    report["jsd"] = matrix


def _stage_classify(cfg: RunConfig, artifacts, out: Path, report: dict) -> None:
    rows = []
    for key, art in artifacts.items():
        counts: Counter = Counter()
        thr = cfg.delta_eta_for(art.pairs[0].label.vehicle_class)
        for pair in art.pairs:
            series = measure_eta(pair, art.newell.params)
            try:
                phases = detect_phases(pair.leader)
            except ValueError:
                phases = None
            pattern = classify_pattern(series, thr, phases=phases,
                                       restore_time=cfg.restore_time)
            counts[pattern.label()] += 1
            rows.append({"group": key, "pair_id": pair.pair_id,
                         "category": pattern.category, "response": pattern.response,
                         "label": pattern.label()})
        total = sum(counts.values())
        report["groups"][key]["pattern_proportions"] = {
            lab: c / total for lab, c in sorted(counts.items())}
    pd.DataFrame(rows).to_csv(out / "patterns.csv", index=False)


def _stage_hysteresis(cfg: RunConfig, artifacts, out: Path, report: dict) -> None:
    rows = []
    comp_rows = []
    for key, art in artifacts.items():
        w = art.newell.params.w
        thr = cfg.thresholds_for(art.pairs[0].label.speed_regime)
        counts: Counter = Counter()
        obs_loops = {}
        for pair in art.pairs:
            loop = _loop_for(pair, w, cfg.zone_dt, cfg.smooth_loops)
            pattern = classify_hysteresis(loop, *thr)
            counts[pattern] += 1
            obs_loops[pair.pair_id] = loop
            rows.append({"group": key, "pair_id": pair.pair_id, "pattern": pattern,
                         "magnitude": loop.magnitude,
                         "center_k": loop.center[0], "center_q": loop.center[1],
                         "sd_k": loop.sd[0], "sd_q": loop.sd[1]})
        total = sum(counts.values())
        report["groups"][key]["hysteresis_proportions"] = {
            lab: c / total for lab, c in sorted(counts.items())}

        # representative-particle reproduction of the held-out loops
        subset = art.test or art.train
        comparison = {}
        for kind in ("best_fit", "p5", "deterministic_optimal"):
            obs, sim, skipped = [], [], []
            for pair in subset:
                rep = select_representative(art.population, pair, art.newell.params,
                                            cw=cfg.weights())[kind]
                sim_foll = simulate_follower(pair.leader, art.newell.params, rep)
                aligned = _aligned_loops(pair.leader, pair.follower, sim_foll,
                                         w, cfg.zone_dt, cfg.smooth_loops)
                if aligned is None:
                    skipped.append(pair.pair_id)
                    continue
                obs.append(aligned[0])
                sim.append(aligned[1])
            if obs:
                d_o, d_sd, nrmse_h = compare_hysteresis(obs, sim)
            else:
                d_o = d_sd = nrmse_h = float("nan")
            comparison[kind] = {"d_O": d_o, "d_sd": d_sd, "nrmse_H": nrmse_h,
                                "skipped_pairs": skipped}
            comp_rows.append({"group": key, "representative": kind,
                              "d_O": d_o, "d_sd": d_sd, "nrmse_H": nrmse_h})
        report["groups"][key]["loop_reproduction"] = comparison
    pd.DataFrame(rows).to_csv(out / "hysteresis.csv", index=False, float_format="%.12g")
    pd.DataFrame(comp_rows).to_csv(out / "loop_reproduction.csv", index=False,
                                   float_format="%.12g")


def _stage_platoon(cfg: RunConfig, artifacts, out: Path, report: dict) -> None:
    by_class: dict[str, GroupArtifacts] = {}
    for key in sorted(artifacts):
        cls = artifacts[key].pairs[0].label.vehicle_class
        by_class.setdefault(cls, artifacts[key])
    if "HDV" not in by_class or "ACC" not in by_class:
        report["platoon"] = {"skipped": "needs both an HDV and an ACC group"}
        return
    hdv, acc = by_class["HDV"], by_class["ACC"]
    first_pair = min((p for art in artifacts.values() for p in art.pairs),
                     key=lambda pr: pr.pair_id)
    spec = PlatoonSpec(leader=first_pair.leader, penetration=0.0,
                       hdv_posterior=hdv.population, acc_posterior=acc.population,
                       hdv_params=hdv.newell.params, acc_params=acc.newell.params,
                       n_vehicles=cfg.platoon_vehicles, runs=cfg.platoon_runs,
                       seed=cfg.seed, zone_dt=cfg.zone_dt, min_spacing=cfg.min_spacing)
    curves = sweep_penetration(spec, cfg.penetrations)
    curves.to_csv(out / "platoon_curves.csv", index=False, float_format="%.12g")
    report["platoon"] = {"hdv_group": hdv.key, "acc_group": acc.key,
                         "leader_pair": first_pair.pair_id,
                         "curves": curves.to_dict(orient="records")}
