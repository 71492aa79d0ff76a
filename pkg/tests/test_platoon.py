import numpy as np
import pytest

from eabcf.abc_smc import ParticlePopulation
from eabcf.newell import NewellParams
from eabcf.platoon import (PlatoonResult, PlatoonRunFailureError, PlatoonSpec,
                           assign_types, run_platoon_batch, simulate_platoon,
                           sweep_penetration)
from eabcf.synthetic import trapezoid_leader


def tight_posterior(center=1.0, spread=0.04, k=25, seed=0):
    """A near-equilibrium posterior: flat profiles with slightly scattered level."""
    rng = np.random.default_rng(seed)
    thetas = np.zeros((k, 8))
    lvl = center + rng.uniform(-spread, spread, size=k)
    thetas[:, 0:4] = lvl[:, None]
    thetas[:, 7] = rng.uniform(5.0, 15.0, size=k)
    return ParticlePopulation(thetas, np.zeros(k), np.full(k, 1.0 / k), 5, 0.05, 0.5, seed)


@pytest.fixture(scope="module")
def base_spec():
    return PlatoonSpec(
        leader=trapezoid_leader("median_high"),
        penetration=0.5,
        hdv_posterior=tight_posterior(seed=1),
        acc_posterior=tight_posterior(seed=2),
        hdv_params=NewellParams(1.0, 6.0),
        acc_params=NewellParams(1.1, 10.0),
        n_vehicles=10,
        runs=4,
        seed=42,
    )


# ---------------------------------------------------------------------------
# type assignment

def test_assign_types_counts():
    types = assign_types(20, 0.5, seed=0)
    assert len(types) == 19
    assert types.count("ACC") == 10          # round(0.5 * 19)
    assert assign_types(20, 0.25, seed=0).count("ACC") == 5   # round(4.75)
    assert assign_types(20, 0.0, seed=0).count("ACC") == 0
    assert assign_types(20, 1.0, seed=0).count("HDV") == 0


def test_assign_types_deterministic_and_varied():
    a = assign_types(20, 0.5, seed=3)
    assert a == assign_types(20, 0.5, seed=3)
    others = {tuple(assign_types(20, 0.5, seed=s)) for s in range(8)}
    assert len(others) > 1                   # placement really is random


def test_assign_types_validation():
    with pytest.raises(ValueError):
        assign_types(1, 0.5)
    with pytest.raises(ValueError):
        assign_types(20, 1.5)


def test_platoon_spec_validation(base_spec):
    from dataclasses import replace
    with pytest.raises(ValueError):
        replace(base_spec, penetration=-0.1)
    with pytest.raises(ValueError):
        replace(base_spec, n_vehicles=1)
    with pytest.raises(ValueError):
        replace(base_spec, runs=0)
    assert base_spec.w == pytest.approx(-6.0)        # HDV wave speed default
    assert replace(base_spec, w_hysteresis=-7.5).w == -7.5


# ---------------------------------------------------------------------------
# single realization

def test_simulate_platoon_chain(base_spec):
    trajs, amplitudes, types = simulate_platoon(base_spec, 0)
    assert len(trajs) == base_spec.n_vehicles
    assert len(types) == base_spec.n_vehicles - 1
    assert amplitudes.shape == (base_spec.n_vehicles,)
    # leader speed drop of the bundled profile is 30 -> 15
    assert amplitudes[0] == pytest.approx(15.0, abs=1e-9)
    for j, (tr, typ) in enumerate(zip(trajs[1:], types), start=1):
        assert tr.vehicle_id == f"veh{j:02d}-{typ}"
    for prev, cur in zip(trajs, trajs[1:]):
        assert np.min(prev.x - cur.x) >= base_spec.min_spacing


def test_simulate_platoon_deterministic(base_spec):
    a, amp_a, types_a = simulate_platoon(base_spec, 3)
    b, amp_b, types_b = simulate_platoon(base_spec, 3)
    assert types_a == types_b
    assert np.array_equal(amp_a, amp_b)
    for ta, tb in zip(a, b):
        assert np.array_equal(ta.x, tb.x)
    c, _, _ = simulate_platoon(base_spec, 4)
    assert not all(np.array_equal(ta.x, tc.x) for ta, tc in zip(a, c))


def test_simulate_platoon_spacing_abort(base_spec):
    from dataclasses import replace
    tight = replace(base_spec, min_spacing=50.0)
    with pytest.raises(PlatoonRunFailureError) as err:
        simulate_platoon(tight, 0)
    assert err.value.run_index == 0
    assert "spacing" in err.value.detail


# ---------------------------------------------------------------------------
# batches and sweeps

def test_run_platoon_batch(base_spec):
    result = run_platoon_batch(base_spec)
    assert isinstance(result, PlatoonResult)
    assert result.n_ok == base_spec.runs
    assert result.failures == []
    assert result.amplitudes.shape == (base_spec.runs, base_spec.n_vehicles)
    assert len(result.sample_trajectories) == base_spec.n_vehicles
    assert result.mean_center().shape == (2,)
    assert result.magnitudes().shape == (base_spec.runs,)


def test_run_platoon_batch_all_failures_raise(base_spec):
    from dataclasses import replace
    doomed = replace(base_spec, min_spacing=50.0)
    with pytest.raises(RuntimeError, match="every platoon run failed"):
        run_platoon_batch(doomed)


def test_sweep_penetration_frame(base_spec):
    df = sweep_penetration(base_spec, [0.0, 0.5, 1.0], runs=3)
    assert df.shape[0] == 3
    for col in ("penetration", "mean_center_k", "mean_center_q", "mean_sd_k",
                "mean_sd_q", "mean_magnitude", "se_magnitude", "runs_ok",
                "runs_failed"):
        assert col in df.columns
    assert df["penetration"].tolist() == [0.0, 0.5, 1.0]
    assert (df["runs_ok"] == 3).all()
    assert (df["runs_failed"] == 0).all()


def test_sweep_exchangeable_when_posteriors_identical(base_spec):
    # identical posteriors and identical shift parameters for both classes:
    # the mixture composition cannot matter, so the curve is exactly flat
    from dataclasses import replace
    shared = tight_posterior(seed=9)
    spec = replace(base_spec, hdv_posterior=shared, acc_posterior=shared,
                   hdv_params=NewellParams(1.0, 6.0),
                   acc_params=NewellParams(1.0, 6.0))
    df = sweep_penetration(spec, [0.0, 0.25, 0.5, 0.75, 1.0], runs=3)
    mags = df["mean_magnitude"].to_numpy()
    assert np.all(mags == mags[0])
    centers = df["mean_center_k"].to_numpy()
    assert np.all(centers == centers[0])
