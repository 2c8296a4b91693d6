import os
import subprocess
import sys

import numpy as np
import pytest

from lstmiss import _backend, _pure
from lstmiss.lstm import random_params
from lstmiss.plant import PhPlantConfig
from lstmiss.signals import substream

try:
    fast = _backend.load("cython")
except ImportError:  # pragma: no cover - only when the extension is not built
    fast = None

needs_ext = pytest.mark.skipif(fast is None, reason="compiled extension not built")


def _net(seed, nx=4, nu=2, ny=2):
    rng = substream(seed)
    p = random_params(nx, nu, ny, 1.2, rng)
    W, U, b = p.packed()
    return p, W, U, b, rng


@needs_ext
@pytest.mark.parametrize("seed", range(5))
def test_forward_agrees(seed):
    p, W, U, b, rng = _net(seed)
    x0, xi0 = rng.normal(size=4), rng.uniform(-1, 1, 4)
    u = np.ascontiguousarray(rng.uniform(-1, 1, (300, 2)))
    for a, c in zip(_pure.lstm_forward(W, U, b, x0, xi0, u), fast.lstm_forward(W, U, b, x0, xi0, u)):
        np.testing.assert_allclose(a, c, rtol=1e-13, atol=1e-15)


@needs_ext
@pytest.mark.parametrize("washout, trunc", [(0, 0), (7, 0), (3, 11)])
def test_loss_grad_agrees(washout, trunc):
    p, W, U, b, rng = _net(10 + washout)
    x0 = np.zeros(4)
    u = np.ascontiguousarray(rng.uniform(-1, 1, (120, 2)))
    y = np.ascontiguousarray(rng.normal(size=(120, 2)))
    ra = _pure.lstm_loss_grad(W, U, b, p.C, p.by, x0, x0, u, y, washout, trunc)
    rc = fast.lstm_loss_grad(W, U, b, p.C, p.by, x0, x0, u, y, washout, trunc)
    assert ra[0] == pytest.approx(rc[0], rel=1e-13)
    for a, c in zip(ra[1:], rc[1:]):
        np.testing.assert_allclose(a, c, rtol=1e-11, atol=1e-14)


@needs_ext
def test_ph_solve_agrees():
    cfg = PhPlantConfig.load()
    for wa in np.linspace(-4e-3, 4e-3, 101):
        for wb in (0.0, 3e-4, 1e-3):
            assert _pure.ph_solve(wa, wb, cfg.pK1, cfg.pK2) == pytest.approx(
                fast.ph_solve(wa, wb, cfg.pK1, cfg.pK2), abs=1e-12)
    assert np.isnan(fast.ph_solve(5.0, 0.0, cfg.pK1, cfg.pK2))
    assert np.isnan(_pure.ph_solve(5.0, 0.0, cfg.pK1, cfg.pK2))


@needs_ext
def test_plant_simulate_agrees():
    cfg = PhPlantConfig.load()
    rng = substream(3)
    q3 = np.ascontiguousarray(cfg.q3_of(rng.uniform(-1, 1, 200)))
    s0 = cfg.equilibrium(0.0).as_array()
    a = _pure.plant_simulate(cfg.param_vector(), s0, q3, cfg.Ts, cfg.substeps)
    c = fast.plant_simulate(cfg.param_vector(), s0, q3, cfg.Ts, cfg.substeps)
    np.testing.assert_allclose(a[0], c[0], rtol=1e-13)
    np.testing.assert_allclose(a[1], c[1], rtol=1e-12)
    assert a[2:] == c[2:]


@needs_ext
def test_plant_status_codes_agree():
    cfg = PhPlantConfig.load()
    par = cfg.param_vector()
    par[_pure.Q1] = par[_pure.Q2] = 0.0
    q3 = np.zeros(50)
    s0 = np.array([0.0, 0.0, 0.5])
    a = _pure.plant_simulate(par, s0, q3, cfg.Ts, cfg.substeps)
    c = fast.plant_simulate(par, s0, q3, cfg.Ts, cfg.substeps)
    assert a[2] == c[2] == _pure.PLANT_TANK_EMPTY
    assert a[3] == c[3]


def test_env_var_forces_python_backend():
    env = dict(os.environ, LSTMISS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import lstmiss; print(lstmiss.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend_name():
    with pytest.raises(ValueError):
        _backend.load("fortran")
    assert _backend.load("python") is _pure
