import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import certified_random
from lstmiss.lstm import LstmParams, random_params, simulate
from lstmiss.signals import substream
from lstmiss.stability import iss_check
from lstmiss.training import (DIVERGED_LOSS, TrainConfig, TrainingFailedError, constraint_values,
                              fit_index, free_run, init_params, loss_gradient, mse_loss, train, violation)


def _data(p, T, seed, chi0=None):
    rng = substream(seed)
    u = rng.uniform(-1, 1, (T, p.nu))
    chi0 = np.zeros(2 * p.nx) if chi0 is None else chi0
    return u, simulate(p, chi0, u)[1]


def _loss_oracle(p, u, y, washout):
    _, ym = simulate(p, np.zeros(2 * p.nx), u)
    r = (ym - y)[washout:]
    return float(np.mean(np.sum(r * r, axis=1)))


def test_mse_exact_model_is_zero():
    p = random_params(2, 1, 1, 0.5, substream(1))
    u, y = _data(p, 60, 2)
    # the loss kernel evaluates the read-out in its own order; equal up to rounding
    assert mse_loss(p, (u, y)) < 1e-30


def test_mse_zero_model_constant_data():
    p = LstmParams.zeros(2, 1, 1, by=0.4)
    u = substream(3).uniform(-1, 1, (30, 1))
    assert mse_loss(p, (u, np.full((30, 1), 0.4))) == 0.0


def test_mse_single_step_toy():
    p = LstmParams.zeros(1, 1, 1, C=2.0, by=0.1)
    # from the zero state y(0) = by regardless of the input
    assert mse_loss(p, ([[0.7]], [[0.5]])) == pytest.approx((0.1 - 0.5) ** 2, rel=1e-15)
    u = [[0.7], [0.0]]
    x1 = 0.5 * math.tanh(0.0)
    y1 = 2.0 * 0.5 * math.tanh(x1) + 0.1
    assert mse_loss(p.replace(Wc=np.array([[1.0]])), (u, [[0.5], [0.2]])) == pytest.approx(
        0.5 * ((0.1 - 0.5) ** 2 + (2.0 * 0.5 * math.tanh(0.5 * math.tanh(0.7)) + 0.1 - 0.2) ** 2), rel=1e-14)
    assert y1 == pytest.approx(0.1)


@given(st.integers(0, 5000), st.integers(0, 20))
def test_mse_matches_simulation_oracle(seed, washout):
    rng = substream(seed)
    p = random_params(3, 2, 2, 0.7, rng)
    u, y = rng.uniform(-1, 1, (40, 2)), rng.normal(size=(40, 2))
    assert mse_loss(p, (u, y), washout) == pytest.approx(_loss_oracle(p, u, y, washout), rel=1e-12)


def test_mse_multiple_sequences_count_weighted():
    rng = substream(4)
    p = random_params(2, 1, 1, 0.7, rng)
    a = (rng.uniform(-1, 1, (30, 1)), rng.normal(size=(30, 1)))
    b = (rng.uniform(-1, 1, (10, 1)), rng.normal(size=(10, 1)))
    w = 5
    ref = (25 * _loss_oracle(p, *a, w) + 5 * _loss_oracle(p, *b, w)) / 30
    assert mse_loss(p, [a, b], w) == pytest.approx(ref, rel=1e-12)


def test_mse_divergence_sentinel():
    p = LstmParams.zeros(1, 1, 1, Wi=1.0)
    u = np.zeros((5, 1))
    u[2] = np.nan
    assert mse_loss(p, (u, np.zeros((5, 1)))) == DIVERGED_LOSS


def _fd_grad(p, data, cfg, name, idx, h=1e-6):
    A = getattr(p, name).copy()
    A[idx] += h
    lp = mse_loss(p.replace(**{name: A}), data, cfg.washout)
    A[idx] -= 2 * h
    lm = mse_loss(p.replace(**{name: A}), data, cfg.washout)
    return (lp - lm) / (2 * h)


def test_gradient_entries_match_finite_differences():
    rng = substream(5)
    p = random_params(2, 2, 1, 0.8, rng)
    data = (rng.uniform(-1, 1, (50, 2)), rng.normal(size=(50, 1)) * 0.5)
    cfg = TrainConfig(washout=3)
    g = loss_gradient(p, data, cfg)
    for name, G in g.items():
        assert G.shape == getattr(p, name).shape
        for idx in np.ndindex(G.shape):
            fd = _fd_grad(p, data, cfg, name, idx)
            assert G[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9), (name, idx)


def test_gradient_output_bias_closed_form():
    rng = substream(6)
    p = random_params(3, 1, 2, 0.8, rng)
    u, y = rng.uniform(-1, 1, (40, 1)), rng.normal(size=(40, 2))
    _, ym = simulate(p, np.zeros(6), u)
    g = loss_gradient(p, (u, y), TrainConfig(washout=4))
    np.testing.assert_allclose(g["by"], 2 * (ym - y)[4:].mean(axis=0), rtol=1e-12)


def test_gradient_empty_window_is_zero():
    rng = substream(7)
    p = random_params(2, 1, 1, 0.8, rng)
    g = loss_gradient(p, (rng.uniform(-1, 1, (10, 1)), np.ones((10, 1))), TrainConfig(washout=10))
    assert all(np.all(v == 0) for v in g.values())


def test_truncation():
    rng = substream(8)
    p = random_params(3, 1, 1, 0.8, rng)
    data = (rng.uniform(-1, 1, (60, 1)), rng.normal(size=(60, 1)))
    full = loss_gradient(p, data, TrainConfig(washout=0, truncation=0))
    long = loss_gradient(p, data, TrainConfig(washout=0, truncation=1000))
    short = loss_gradient(p, data, TrainConfig(washout=0, truncation=5))
    for k in full:
        np.testing.assert_array_equal(full[k], long[k])
    # the read-out does not go through the recursion, so truncation cannot touch it
    np.testing.assert_array_equal(full["C"], short["C"])
    np.testing.assert_array_equal(full["by"], short["by"])
    assert not np.allclose(full["Uf"], short["Uf"])


def test_constraint_values_zero_net():
    cv = constraint_values(LstmParams.zeros(2, 1, 1))
    assert (cv.lhs1, cv.lhs2) == (0.75, 0.0)


@given(st.integers(0, 5000))
def test_constraint_values_match_certificate(seed):
    p = random_params(3, 2, 1, 1.0, substream(seed))
    cv, c = constraint_values(p), iss_check(p)
    assert cv.lhs1 == pytest.approx(c.lhs1, rel=1e-14)
    assert cv.lhs2 == pytest.approx(c.lhs2, rel=1e-14)


def test_constraint_subgradient_inactive_rows():
    p = LstmParams.zeros(2, 1, 1, Wf=[[2.0], [0.1]], Uc=[[0.5, 0.0], [0.0, 0.1]])
    cv = constraint_values(p)
    assert cv.grad1["Wf"][1, 0] == 0.0 and cv.grad1["Wf"][0, 0] > 0
    assert cv.grad2["Uc"][1, 1] == 0.0 and cv.grad2["Uc"][0, 0] > 0


def test_constraint_subgradient_tie_lowest_index():
    cv = constraint_values(LstmParams.zeros(2, 1, 1, bo=[0.3, -0.3]))
    assert cv.grad1["bo"][0] > 0 and cv.grad1["bo"][1] == 0.0


@given(st.integers(0, 5000))
def test_constraint_directional_derivative(seed):
    rng = substream(seed)
    p = random_params(3, 2, 1, 1.0, rng)
    d = {k: rng.normal(size=v.shape) for k, v in p.as_dict().items()}
    cv = constraint_values(p)
    h = 1e-7

    def shifted(t):
        return constraint_values(p.replace(**{k: v + t * d[k] for k, v in p.as_dict().items()}))

    lp, lm = shifted(h), shifted(-h)
    for side, grad in (("lhs1", cv.grad1), ("lhs2", cv.grad2)):
        pred = sum(float(np.sum(grad[k] * d[k])) for k in d)
        fd = (getattr(lp, side) - getattr(lm, side)) / (2 * h)
        assert pred == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_init_params_certified_and_seeded():
    cfg = TrainConfig(init_scale=4.0, seed=3)
    p = init_params(5, 1, 1, cfg)
    assert iss_check(p).delta >= cfg.delta_min
    q = init_params(5, 1, 1, cfg)
    assert p.packed()[0].tobytes() == q.packed()[0].tobytes()


def test_train_from_optimum_stays_put():
    p = certified_random(2, 1, 1, seed=9, delta_min=0.1)
    data = _data(p, 300, 10)
    cfg = TrainConfig(max_iterations=30, lr=1e-4, lr_final=1e-5, washout=0)
    q, hist = train(p, data, cfg)
    assert hist.loss[0] < 1e-30
    assert hist.best_loss < 1e-8
    assert iss_check(q).delta >= cfg.delta_min


def test_train_frozen_infeasible_fails():
    p = LstmParams.zeros(2, 1, 1, Uc=3.0)
    data = _data(LstmParams.zeros(2, 1, 1), 50, 11)
    cfg = TrainConfig(max_iterations=20, lr=0.0, lr_final=0.0, mu_growth=1.0, washout=0)
    with pytest.raises(TrainingFailedError):
        train(p, data, cfg)


def test_train_recovers_feasibility_and_escalation_is_monotone():
    rng = substream(12)
    target = certified_random(2, 1, 1, seed=13, delta_min=0.1)
    data = _data(target, 400, 14)
    p0 = random_params(2, 1, 1, 2.5, rng)
    assert not iss_check(p0).is_iss
    cfg = TrainConfig(max_iterations=600, stage_length=50, lr=2e-2, washout=10, seed=1)
    p, hist = train(p0, data, cfg)
    assert iss_check(p).delta >= cfg.delta_min
    v = hist.stage_violation
    assert v[0] > 0 and v[-1] == 0.0
    assert all(b <= a for a, b in zip(v, v[1:]))
    assert max(hist.mu) > cfg.mu0


def test_train_history_and_determinism():
    target = certified_random(2, 1, 1, seed=15, delta_min=0.1)
    data = _data(target, 200, 16)
    cfg = TrainConfig(max_iterations=40, washout=5, seed=2)
    p1, h1 = train(init_params(2, 1, 1, cfg), data, cfg)
    p2, h2 = train(init_params(2, 1, 1, cfg), data, cfg)
    assert len(h1.loss) == len(h1.lhs1) == len(h1.lhs2) == 41
    assert h1.loss == h2.loss
    assert p1.packed()[1].tobytes() == p2.packed()[1].tobytes()
    rows = list(h1.rows())
    assert rows[0][0] == 0 and len(rows[0]) == 4
    assert h1.best_loss == min(L for L, a, b in zip(h1.loss, h1.lhs1, h1.lhs2)
                               if violation(a, b, cfg.delta_min) == 0 and a < 0.95 and b < 0.95)


def test_train_rejects_long_washout():
    data = _data(LstmParams.zeros(1, 1, 1), 20, 17)
    with pytest.raises(ValueError, match="washout"):
        train(LstmParams.zeros(1, 1, 1), data, TrainConfig(washout=20, max_iterations=1))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(delta_min=0.0)
    with pytest.raises(ValueError):
        TrainConfig(delta_min=1.0)
    with pytest.raises(ValueError):
        TrainConfig(washout=-1)
    cfg = TrainConfig(lr=1e-2, lr_final=1e-3, max_iterations=101)
    assert cfg.lr_at(0) == pytest.approx(1e-2) and cfg.lr_at(100) == pytest.approx(1e-3)


def test_fit_index_examples():
    assert fit_index([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 100.0
    assert fit_index([3.0, 4.0], [3.0, 0.0]) == pytest.approx(20.0, rel=1e-15)
    with pytest.raises(ValueError):
        fit_index([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        fit_index([1.0, 2.0], [1.0])


def test_free_run_matches_simulate():
    rng = substream(18)
    p = random_params(2, 1, 1, 0.8, rng)
    u = rng.uniform(-1, 1, (25, 1))
    np.testing.assert_array_equal(free_run(p, u), simulate(p, np.zeros(4), u)[1])
