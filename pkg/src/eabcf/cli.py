"""Batch command-line interface.

Every analysis subcommand is driven by a JSON config (see RunConfig); common
knobs are overridable by flags. `pipeline` runs everything end to end.
"""

from __future__ import annotations

import json
from pathlib import Path

import click

from .config import RunConfig


def _load_config(config_path, **overrides) -> RunConfig:
    cfg = RunConfig.load(config_path) if config_path else RunConfig()
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg.validate()


def _config_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="JSON run configuration")(fn)
    fn = click.option("--data", "trajectories", default=None,
                      help="trajectory CSV (overrides config)")(fn)
    fn = click.option("--manifest", default=None, help="pair manifest CSV")(fn)
    fn = click.option("--out", "out_dir", default=None, help="output directory")(fn)
    fn = click.option("--seed", type=int, default=None, help="master seed")(fn)
    return fn


def _groups_with_newell(cfg: RunConfig):
    from .newell import calibrate_newell
    from .pipeline import _group_pairs
    from .trajectory import load_trajectories
    pairs = load_trajectories(cfg.trajectories, cfg.manifest,
                              schema=cfg.schema or None, dt=cfg.dt)
    groups = _group_pairs(pairs)
    return {key: (members, calibrate_newell(members, cfg.tau_grid, cfg.delta_grid,
                                            group=key))
            for key, members in groups.items()}


@click.group()
def main() -> None:
    """Car-following calibration, reaction patterns, hysteresis, platoons."""


@main.command()
@click.option("--scenario", required=True, help="synthetic scenario name")
@click.option("--out", "out_dir", required=True, help="dataset directory")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--noise", type=float, default=0.0, show_default=True,
              help="AR(1) position noise SD (m)")
@click.option("--pairs", "n_pairs", type=int, default=None, help="pair count")
def generate(scenario, out_dir, seed, noise, n_pairs):
    """Write a synthetic dataset with a ground-truth sidecar."""
    from .synthetic import SCENARIOS, generate_dataset
    if scenario not in SCENARIOS:
        raise click.UsageError(f"unknown scenario; choose from {sorted(SCENARIOS)}")
    data, manifest, truth = generate_dataset(scenario, out_dir, seed=seed,
                                             noise_sigma=noise, n_pairs=n_pairs)
    click.echo(f"wrote {data}\n      {manifest}\n      {truth}")


@main.command("calibrate-newell")
@_config_options
def calibrate_newell_cmd(config_path, **overrides):
    """Grid-fit response time and minimum spacing per group."""
    from .newell import save_newell
    cfg = _load_config(config_path, **overrides)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = {key: nres for key, (_, nres) in _groups_with_newell(cfg).items()}
    save_newell(results, out / "newell.json")
    for key, nres in results.items():
        click.echo(f"{key}: tau={nres.params.tau:.2f} s, delta={nres.params.delta:.2f} m, "
                   f"w={nres.params.w:.2f} m/s")


@main.command("calibrate-eab")
@_config_options
@click.option("--k", "k_particles", type=int, default=None, help="particles")
@click.option("--lambda", "lam", type=float, default=None, help="survivor fraction")
def calibrate_eab_cmd(config_path, **overrides):
    """Calibrate the deviation-profile posterior per group (training split)."""
    from .abc_smc import run_calibration, save_diagnostics, save_posterior
    from .pipeline import split_pairs
    cfg = _load_config(config_path, **overrides)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for gi, (key, (members, nres)) in enumerate(_groups_with_newell(cfg).items()):
        train, _ = split_pairs(members, cfg.train_frac, cfg.seed, group_index=gi)
        cls = members[0].label.vehicle_class
        pop, trace = run_calibration(train, cfg.prior_for(cls), nres.params,
                                     k=cfg.k_particles, lam=cfg.lam,
                                     rho_stop=cfg.rho_stop, max_iter=cfg.max_iter,
                                     seed=cfg.seed, cw=cfg.weights())
        tag = key.replace(":", "_")
        save_posterior(pop, out / f"posterior_{tag}.csv")
        save_diagnostics(trace, out / f"diagnostics_{tag}.csv")
        click.echo(f"{key}: {pop.iteration} iterations, tolerance {pop.tolerance:.4f}, "
                   f"acceptance {pop.acceptance:.4f}")


@main.command()
@_config_options
def classify(config_path, **overrides):
    """Classify each pair's measured deviation series into reaction patterns."""
    import pandas as pd
    from .eab import classify_pattern, measure_eta
    from .trajectory import detect_phases
    cfg = _load_config(config_path, **overrides)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for key, (members, nres) in _groups_with_newell(cfg).items():
        thr = cfg.delta_eta_for(members[0].label.vehicle_class)
        for pair in members:
            series = measure_eta(pair, nres.params)
            try:
                phases = detect_phases(pair.leader)
            except ValueError:
                phases = None
            pat = classify_pattern(series, thr, phases=phases,
                                   restore_time=cfg.restore_time)
            rows.append({"group": key, "pair_id": pair.pair_id,
                         "category": pat.category, "response": pat.response,
                         "label": pat.label()})
            click.echo(f"{pair.pair_id}: {pat.label()}")
    pd.DataFrame(rows).to_csv(out / "patterns.csv", index=False)


@main.command()
@_config_options
def validate(config_path, **overrides):
    """Assignment distances of saved posteriors against the held-out pairs."""
    from .abc_smc import load_posterior
    from .pipeline import split_pairs
    from .validation import ws_metric
    cfg = _load_config(config_path, **overrides)
    out = Path(cfg.out_dir)
    for gi, (key, (members, nres)) in enumerate(_groups_with_newell(cfg).items()):
        tag = key.replace(":", "_")
        post = out / f"posterior_{tag}.csv"
        if not post.exists():
            raise click.UsageError(f"missing {post}; run calibrate-eab first")
        pop = load_posterior(post, seed=cfg.seed)
        _, test = split_pairs(members, cfg.train_frac, cfg.seed, group_index=gi)
        subset = test or members
        res = ws_metric(pop, subset, nres.params, cw=cfg.weights())
        click.echo(f"{key}: zeta_x={res.ws_x:.4f} m, zeta_eta={res.ws_eta:.5f}, "
                   f"zeta_eta_c={res.ws_eta_c:.5f} ({len(res.pair_ids)} pairs)")


@main.command()
@_config_options
def hysteresis(config_path, **overrides):
    """Loop construction and pattern classification for every pair."""
    import pandas as pd
    from .hysteresis import build_loop, build_zones, classify_hysteresis
    cfg = _load_config(config_path, **overrides)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for key, (members, nres) in _groups_with_newell(cfg).items():
        thr = cfg.thresholds_for(members[0].label.speed_regime)
        for pair in members:
            zones = build_zones([pair.leader, pair.follower], nres.params.w, cfg.zone_dt)
            loop = build_loop(zones, nres.params.w, smooth=cfg.smooth_loops)
            pattern = classify_hysteresis(loop, *thr)
            rows.append({"group": key, "pair_id": pair.pair_id, "pattern": pattern,
                         "magnitude": loop.magnitude})
            click.echo(f"{pair.pair_id}: {pattern} (magnitude {loop.magnitude:.1f})")
    pd.DataFrame(rows).to_csv(out / "hysteresis.csv", index=False, float_format="%.12g")


@main.command()
@_config_options
@click.option("--runs", type=int, default=None, help="simulations per penetration")
@click.option("--penetrations", default=None, help="comma-separated ACC shares")
def platoon(config_path, runs, penetrations, **overrides):
    """Mixed-platoon sweep from saved posteriors."""
    from .abc_smc import load_posterior
    from .platoon import PlatoonSpec, sweep_penetration
    cfg = _load_config(config_path, **overrides)
    if runs is not None:
        cfg.platoon_runs = runs
    if penetrations is not None:
        cfg.penetrations = tuple(float(v) for v in penetrations.split(","))
    cfg.validate()
    out = Path(cfg.out_dir)
    groups = _groups_with_newell(cfg)
    by_class = {}
    for key in sorted(groups):
        members, nres = groups[key]
        cls = members[0].label.vehicle_class
        if cls not in by_class:
            tag = key.replace(":", "_")
            post = out / f"posterior_{tag}.csv"
            if not post.exists():
                raise click.UsageError(f"missing {post}; run calibrate-eab first")
            by_class[cls] = (members, nres, load_posterior(post, seed=cfg.seed))
    if "HDV" not in by_class or "ACC" not in by_class:
        raise click.UsageError("platoon sweep needs both an HDV and an ACC group")
    hdv, acc = by_class["HDV"], by_class["ACC"]
    leader = min((p for members, _, _ in by_class.values() for p in members),
                 key=lambda pr: pr.pair_id).leader
    spec = PlatoonSpec(leader=leader, penetration=0.0,
                       hdv_posterior=hdv[2], acc_posterior=acc[2],
                       hdv_params=hdv[1].params, acc_params=acc[1].params,
                       n_vehicles=cfg.platoon_vehicles, runs=cfg.platoon_runs,
                       seed=cfg.seed, zone_dt=cfg.zone_dt, min_spacing=cfg.min_spacing)
    curves = sweep_penetration(spec, cfg.penetrations)
    curves.to_csv(out / "platoon_curves.csv", index=False, float_format="%.12g")
    click.echo(curves.to_string(index=False))


@main.command()
@_config_options
@click.option("--k", "k_particles", type=int, default=None, help="particles")
@click.option("--lambda", "lam", type=float, default=None, help="survivor fraction")
@click.option("--runs", type=int, default=None, help="platoon simulations")
@click.option("--penetrations", default=None, help="comma-separated ACC shares")
def pipeline(config_path, runs, penetrations, **overrides):
    """Run every stage end to end and emit the artifact bundle."""
    from .pipeline import run_pipeline
    cfg = _load_config(config_path, **overrides)
    if runs is not None:
        cfg.platoon_runs = runs
    if penetrations is not None:
        cfg.penetrations = tuple(float(v) for v in penetrations.split(","))
    cfg.validate()
    report = run_pipeline(cfg)
    click.echo(f"report written to {Path(cfg.out_dir) / 'report.json'} "
               f"({len(report['groups'])} groups)")


@main.command()
@click.option("--out", "out_dir", required=True, help="pipeline output directory")
def report(out_dir):
    """Summarize a previously produced report bundle."""
    path = Path(out_dir) / "report.json"
    if not path.exists():
        raise click.UsageError(f"no report at {path}")
    rep = json.loads(path.read_text())
    for key, grp in sorted(rep.get("groups", {}).items()):
        nw = grp["newell"]
        click.echo(f"{key}: tau={nw['tau']}, delta={nw['delta']}, "
                   f"iterations={len(grp['gamma_trace']) - 1}")
        for name in ("pattern_proportions", "hysteresis_proportions"):
            if name in grp:
                parts = ", ".join(f"{k}={v:.2f}" for k, v in grp[name].items())
                click.echo(f"  {name.split('_')[0]}: {parts}")
        if "ws_test" in grp:
            ws = grp["ws_test"]
            click.echo(f"  ws(test): x={ws['zeta_x']:.3f} m, eta={ws['zeta_eta']:.4f}, "
                       f"eta_c={ws['zeta_eta_c']:.4f}")
    if "platoon" in rep and "curves" in rep["platoon"]:
        click.echo("penetration sweep:")
        for row in rep["platoon"]["curves"]:
            click.echo(f"  p={row['penetration']:.2f}: magnitude "
                       f"{row['mean_magnitude']:.1f} +/- {row['se_magnitude']:.1f}")


if __name__ == "__main__":
    main()
