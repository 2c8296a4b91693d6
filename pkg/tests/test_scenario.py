import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import certified_random
from lstmiss.lstm import LstmParams, simulate
from lstmiss.plant import PhPlantConfig, simulate_plant_q3
from lstmiss.scenario import (LstmSystem, PlantSystem, ReachResult, ScenarioError, ScenarioSpec,
                              UncertifiedSampleWarning, estimate_rho, required_scenarios, sample_scenario,
                              sequence_sup_norm, sweep_rho)
from lstmiss.signals import MprsClass, NormalizationSpec, normalize
from lstmiss.stability import analytic_state_bound, lyapunov_V


def _spec(**kw):
    kw.setdefault("certified", False)
    kw.setdefault("tau", 100)
    return ScenarioSpec(**kw)


class Constant:
    n_state = 0
    n_u = 1

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)

    def outputs(self, chi0, u):
        return np.tile(self.c, (len(u) + 1, 1))


class Blows:
    n_state = 2
    n_u = 1

    def __init__(self, bad):
        self.bad = bad
        self.calls = 0

    def outputs(self, chi0, u):
        if abs(chi0[0]) > self.bad:
            return np.array([[np.inf]])
        return np.zeros((len(u) + 1, 1))


class Raises(Blows):
    def outputs(self, chi0, u):
        if abs(chi0[0]) > self.bad:
            raise FloatingPointError("boom")
        return np.zeros((len(u) + 1, 1))


def test_required_scenarios_examples():
    assert required_scenarios(1e-2, 1e-6, 1) == 2964
    assert required_scenarios(2.0, math.exp(-1), 0) == 1
    assert required_scenarios(0.05, 1e-3, 1) == 317


@given(st.floats(1e-3, 0.5), st.floats(1e-9, 0.5), st.integers(0, 5))
def test_required_scenarios_is_smallest_integer(eps, beta, d):
    n = required_scenarios(eps, beta, d)
    bound = (2 / eps) * (math.log(1 / beta) + d)
    assert n >= bound * (1 - 1e-15)
    assert n - 1 < bound


def test_required_scenarios_domain():
    for args in ((0.0, 0.1, 1), (-1.0, 0.1, 1), (0.1, 0.0, 1), (0.1, 1.0, 1), (0.1, 0.5, -1)):
        with pytest.raises(ValueError):
            required_scenarios(*args)


def test_spec_defaults_and_certification():
    s = ScenarioSpec()
    assert s.N == 2964 and s.tau == 2000 and s.x0_box == 0.1 and s.input_class.tau == 2000
    with pytest.raises(ValueError):
        ScenarioSpec(N=100)
    assert ScenarioSpec(N=100, certified=False).N == 100


def test_sample_zero_box():
    spec = _spec(N=20, x0_box=0.0)
    for i in range(1, 21):
        chi0, _ = sample_scenario(spec, i, 6)
        assert np.all(chi0 == 0.0)


def test_sample_support_and_determinism():
    spec = _spec(N=50, x0_box=0.1, input_class=MprsClass(rho_u=0.4))
    for i in range(1, 51):
        chi0, u = sample_scenario(spec, i, 10)
        assert chi0.shape == (10,) and np.all(np.abs(chi0) <= 0.1)
        assert u.shape == (100, 1) and np.all(np.abs(u) <= 0.4)
        chi0b, ub = sample_scenario(spec, i, 10)
        assert chi0.tobytes() == chi0b.tobytes() and u.tobytes() == ub.tobytes()


def test_sample_index_range():
    spec = _spec(N=5)
    for i in (0, 6):
        with pytest.raises(IndexError):
            sample_scenario(spec, i, 2)


def test_input_independent_of_state_size():
    spec = _spec(N=3)
    _, u_a = sample_scenario(spec, 2, 0)
    _, u_b = sample_scenario(spec, 2, 10)
    assert u_a.tobytes() == u_b.tobytes()


def test_constant_system():
    res = estimate_rho(Constant([3.0, 4.0]), _spec(N=7))
    assert res.rho_star == 5.0 and len(res.per_scenario_max) == 7


def test_zero_net_single_scenario():
    p = LstmParams.zeros(2, 1, 1, by=0.3)
    res = estimate_rho(LstmSystem(p), _spec(N=1))
    assert res.rho_star == pytest.approx(0.3, abs=1e-16)


def test_initial_output_enters_sup():
    # y(0) = C xi0 + by is the largest output of this net
    p = LstmParams.zeros(1, 1, 1, C=10.0)
    spec = _spec(N=5, x0_box=0.1)
    res = estimate_rho(LstmSystem(p), spec)
    xi0 = [abs(sample_scenario(spec, i, 2)[0][1]) for i in range(1, 6)]
    assert res.rho_star == pytest.approx(10.0 * max(xi0), rel=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_exact_program_solution(seed):
    p = certified_random(3, 1, 2, seed=seed)
    spec = _spec(N=25, master_seed=seed, input_class=MprsClass(rho_u=0.3 + 0.07 * seed))
    res = estimate_rho(LstmSystem(p), spec)
    costs = []
    for i in range(1, 26):
        chi0, u = sample_scenario(spec, i, 6)
        states, _ = simulate(p, chi0, u)
        y = states[:, 3:] @ p.C.T + p.by
        costs.append(max(math.sqrt(sum(v * v for v in row)) for row in y))
    assert res.rho_star == max(costs)
    assert res.argmax_scenario == int(np.argmax(costs)) + 1
    np.testing.assert_array_equal(res.per_scenario_max, costs)


def test_workers_do_not_change_result():
    p = certified_random(2, 1, 1, seed=3)
    spec = _spec(N=40, master_seed=5)
    a = estimate_rho(LstmSystem(p), spec, workers=1)
    b = estimate_rho(LstmSystem(p), spec, workers=4)
    assert a.rho_star == b.rho_star and a.argmax_scenario == b.argmax_scenario
    assert a.per_scenario_max.tobytes() == b.per_scenario_max.tobytes()


def test_nested_sample_monotone():
    p = certified_random(2, 1, 1, seed=6)
    r = [estimate_rho(LstmSystem(p), _spec(N=n, master_seed=9)) for n in (5, 20, 60)]
    for a, b in zip(r, r[1:]):
        assert b.rho_star >= a.rho_star
        np.testing.assert_array_equal(b.per_scenario_max[:a.N], a.per_scenario_max)


def test_uncertified_warning():
    with pytest.warns(UncertifiedSampleWarning):
        res = estimate_rho(Constant([1.0]), _spec(N=3))
    assert "exploratory" in res.warning
    spec = ScenarioSpec(epsilon=0.5, beta_conf=0.5, tau=10)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert estimate_rho(Constant([1.0]), spec).warning is None


def test_divergent_scenario_named():
    spec = _spec(N=200, x0_box=1.0)
    first_bad = next(i for i in range(1, 201) if abs(sample_scenario(spec, i, 2)[0][0]) > 0.9)
    for system in (Blows(0.9), Raises(0.9)):
        with pytest.raises(ScenarioError) as err:
            estimate_rho(system, spec)
        assert err.value.index == first_bad


def test_containment_consistency():
    for seed in range(5):
        p = certified_random(2, 1, 1, seed=20 + seed)
        spec = _spec(N=30, master_seed=seed)
        res = estimate_rho(LstmSystem(p), spec)
        _, radius = analytic_state_bound(p, 1.0)
        v0 = max(lyapunov_V(sample_scenario(spec, i, 4)[0]) for i in range(1, 31))
        bound = np.linalg.norm(p.C, 2) * max(radius, v0) + np.linalg.norm(p.by)
        assert res.rho_star <= bound


def test_sweep_single_point_and_constant():
    p = certified_random(2, 1, 1, seed=7)
    spec = _spec(N=10)
    (r, v), = sweep_rho(LstmSystem(p), spec, [0.6])
    assert r == 0.6 and v == estimate_rho(LstmSystem(p), spec.with_rho(0.6, stream=0)).rho_star
    z = sweep_rho(LstmSystem(LstmParams.zeros(2, 1, 1, by=-0.25)), spec, [0.1, 0.5, 1.0])
    assert [v for _, v in z] == pytest.approx([0.25] * 3, abs=1e-16)


def test_sweep_streams_are_fresh_and_results_kept():
    spec = _spec(N=4)
    out = sweep_rho(Constant([1.0]), spec, [0.2, 0.4], return_results=True)
    assert all(isinstance(rr, ReachResult) for _, rr in out)
    _, u0 = sample_scenario(spec.with_rho(0.2, stream=0), 1, 0)
    _, u1 = sample_scenario(spec.with_rho(0.2, stream=1), 1, 0)
    assert not np.array_equal(u0, u1)


def test_sweep_nondecreasing_on_near_linear_net():
    p = LstmParams.zeros(2, 1, 1, Wc=[[0.8], [0.3]], C=[[2.0, 1.0]], bf=[-1.0, -1.0], bo=[1.0, 1.0])
    curve = [v for _, v in sweep_rho(LstmSystem(p), _spec(N=60, x0_box=0.0), [0.2, 0.4, 0.6, 0.8, 1.0])]
    assert all(b >= a for a, b in zip(curve, curve[1:]))


def test_sweep_grid_validation():
    for grid in ([], [0.0], [1.2]):
        with pytest.raises(ValueError):
            sweep_rho(Constant([1.0]), _spec(N=2), grid)


def test_plant_system():
    cfg = PhPlantConfig.load()
    nu = NormalizationSpec([15.9], [3.6])
    ny = NormalizationSpec([7.4], [2.4])
    sysp = PlantSystem(cfg, nu, ny)
    assert sysp.n_state == 0
    u = np.concatenate([np.zeros(50), np.full(50, 2.0)])[:, None]
    y = sysp.outputs(np.zeros(0), u)
    assert y.shape == (101, 1)
    q3 = np.clip(u[:, 0] * 3.6 + 15.9, cfg.q3_of(-1.0), cfg.q3_of(1.0))
    _, ph = simulate_plant_q3(cfg, cfg.equilibrium(float(cfg.u_of(15.9))), q3)
    np.testing.assert_array_equal(y[:, 0], normalize(ph[:, None], ny)[:, 0])
    assert y[0, 0] == pytest.approx(y[49, 0], abs=1e-12)


def test_sup_norm_and_result_json():
    assert sequence_sup_norm(np.array([[3.0, 4.0], [0.0, 1.0]])) == 5.0
    res = estimate_rho(Constant([0.5]), _spec(N=2))
    doc = res.to_json()
    assert doc["rho_star"] == 0.5 and doc["N"] == 2 and doc["argmax_scenario"] == 1
    lo, hi = res.denormalized_interval(NormalizationSpec([7.0], [2.0]))
    assert (lo[0], hi[0]) == (6.0, 8.0)
