import numpy as np
import pytest

from eabcf.newell import (DELTA_GRID, TAU_GRID, NewellParams, NewellResult,
                          calibrate_newell, grid_values, load_newell, nrmse,
                          save_newell)
from eabcf.synthetic import synthetic_pair, trapezoid_leader
from eabcf.trajectory import CFPair, PairLabel, Trajectory, align_pair, newell_shift

# Hand-computed: rmse = sqrt((1+1+1)/3) = 1, rms(obs) = sqrt(140000/3)
NRMSE_ORACLE = 0.004629100498862757


def test_nrmse_hand_computed():
    got = nrmse(np.array([100.0, 200.0, 300.0]), np.array([101.0, 201.0, 299.0]))
    assert got == pytest.approx(NRMSE_ORACLE, rel=0.0, abs=1e-15)


def test_nrmse_identity_is_zero():
    a = np.linspace(1, 9, 17)
    assert nrmse(a, a) == 0.0


def test_nrmse_rejects_mismatch_and_degenerate():
    with pytest.raises(ValueError):
        nrmse(np.ones(3), np.ones(4))
    with pytest.raises(ValueError):
        nrmse(np.empty(0), np.empty(0))
    with pytest.raises(ValueError):
        nrmse(np.zeros(5), np.ones(5))


def test_grid_values_inclusive_endpoints():
    taus = grid_values(TAU_GRID)
    deltas = grid_values(DELTA_GRID)
    assert taus.size == 16
    assert taus[0] == pytest.approx(0.5) and taus[-1] == pytest.approx(2.0)
    assert deltas.size == 14
    assert deltas[0] == pytest.approx(2.0) and deltas[-1] == pytest.approx(15.0)
    with pytest.raises(ValueError):
        grid_values((1.0, 0.5, 0.1))


def test_newell_params_validation_and_wave_speed():
    p = NewellParams(1.25, 10.0)
    assert p.w == pytest.approx(-8.0)
    with pytest.raises(ValueError):
        NewellParams(0.0, 5.0)
    with pytest.raises(ValueError):
        NewellParams(1.0, -1.0)


def _pure_shift_pair(tau: float, delta: float) -> CFPair:
    lead = trapezoid_leader("median_high")
    foll = newell_shift(lead, tau, delta)
    return align_pair(lead, foll, PairLabel("ACC", "t"), "p")


@pytest.mark.parametrize("tau,delta", [(0.5, 2.0), (1.1, 10.0), (2.0, 15.0), (1.6, 7.0)])
def test_calibrate_recovers_exact_on_grid_shift(tau, delta):
    res = calibrate_newell([_pure_shift_pair(tau, delta)])
    assert res.params.tau == pytest.approx(tau)
    assert res.params.delta == pytest.approx(delta)
    assert res.objective < 1e-12


def test_calibrate_pools_pairs():
    pairs = [_pure_shift_pair(1.2, 8.0), _pure_shift_pair(1.2, 8.0)]
    res = calibrate_newell(pairs, group="g")
    assert res.params.tau == pytest.approx(1.2)
    assert res.params.delta == pytest.approx(8.0)
    assert res.group == "g"


def test_calibrate_tie_breaks_to_smallest_shift():
    # A constant-speed leader makes every (tau, delta) with v*tau + delta equal
    # fit exactly; none is on the grid twice, so instead feed literally
    # identical fits by zero-length disturbance: x_f(t) = x_l(t - tau) - delta
    # with v = 0 means every delta on the grid fits only at one value, but
    # every tau fits equally. The scan must keep the first (smallest) tau.
    n = 601
    t = np.arange(n) * 0.1
    lead = Trajectory("L", 0.1, t, np.full(n, 100.0), np.zeros(n))
    foll = Trajectory("F", 0.1, t, np.full(n, 95.0), np.zeros(n))
    pair = CFPair("p", lead, foll, PairLabel("HDV"))
    res = calibrate_newell([pair])
    assert res.params.tau == pytest.approx(0.5)
    assert res.params.delta == pytest.approx(5.0)
    assert res.objective < 1e-12


def test_calibrate_requires_pairs():
    with pytest.raises(ValueError):
        calibrate_newell([])


def test_calibrate_on_synthetic_plant():
    # the planted flat profile sits at eta0 (jittered around 1), so the pair
    # is a pure shift by (eta0*tau, eta0*delta).  Position error is nearly
    # invariant along delta + v*tau = const, so compare the recovered steady
    # spacing at both plateau speeds instead of the raw parameters.
    pair, theta, p = synthetic_pair("ne", cls="ACC", seed=1, noise_sigma=0.0)
    res = calibrate_newell([pair])
    for v in (30.0, 15.0):
        got = res.params.delta + v * res.params.tau
        want = theta.eta0 * (p.delta + v * p.tau)
        assert abs(got - want) <= 2.0
    assert res.objective < 2e-3


def test_save_load_roundtrip(tmp_path):
    results = {
        "ACC": NewellResult(NewellParams(1.1, 10.0), 0.002, "ACC"),
        "HDV": NewellResult(NewellParams(1.0, 6.0), 0.004, "HDV"),
    }
    path = tmp_path / "newell.json"
    save_newell(results, path)
    back = load_newell(path)
    assert set(back) == {"ACC", "HDV"}
    for g in results:
        assert back[g].params == results[g].params
        assert back[g].objective == results[g].objective
