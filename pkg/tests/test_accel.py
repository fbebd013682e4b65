import os
import subprocess
import sys

import numpy as np
import pytest

from reactorgp import _accel, _rnn, surrogate
from reactorgp.reactor import Recipe, default_controller, run_batch

needs_numba = pytest.mark.skipif(not _accel.USE_NUMBA, reason="numba not active")


def _case(seed=0, B=6):
    m = surrogate.init(seed, hidden=(5, 4), H=4, F=3)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(B, m.H + m.F, 7))
    X[:, m.H:, :5] = 0.0
    Y = rng.normal(size=(B, m.F, 5))
    return m, X, Y


@needs_numba
def test_rnn_forward_backends_agree():
    m, X, _ = _case()
    dims = m.dims
    a = _rnn.forward(m.theta, X, m.F, dims, use_numba=True)
    b = _rnn.forward(m.theta, X, m.F, dims, use_numba=False)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


@needs_numba
def test_rnn_gradient_backends_agree():
    m, X, Y = _case(1)
    la, ga = _rnn.loss_and_grad(m.theta, X, Y, m.dims, use_numba=True)
    lb, gb = _rnn.loss_and_grad(m.theta, X, Y, m.dims, use_numba=False)
    assert la == pytest.approx(lb, rel=1e-12)
    np.testing.assert_allclose(ga, gb, rtol=1e-10, atol=1e-13)


def test_cell_step_matches_unroll():
    m, X, _ = _case(2, B=3)
    h1 = np.zeros((3, m.hidden[0]))
    h2 = np.zeros((3, m.hidden[1]))
    outs = []
    for t in range(X.shape[1]):
        h1, h2, y = _rnn.cell_step(m.theta, X[:, t], h1, h2, m.dims)
        outs.append(y)
    ref = _rnn.forward(m.theta, X, m.F, m.dims, use_numba=False)
    np.testing.assert_allclose(np.stack(outs[m.H:], axis=1), ref, atol=1e-13)


_SCRIPT = """
import sys, numpy as np
from reactorgp import _accel
from reactorgp.reactor import Recipe, ReactorParams, default_controller, run_batch
p = ReactorParams()
r = Recipe.sampled(362.0, 5, p)
tr = run_batch(r, default_controller(r), p)
np.save(sys.argv[1], tr.data)
print(_accel.USE_NUMBA)
"""


def test_reactor_backends_agree(tmp_path):
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, REACTORGP_DISABLE_NUMBA=flag)
        path = tmp_path / f"traj_{flag}.npy"
        res = subprocess.run([sys.executable, "-c", _SCRIPT, str(path)], env=env,
                             capture_output=True, text=True, check=True)
        out[flag] = (res.stdout.strip(), np.load(path))
    assert out["1"][0] == "False"
    a, b = out["0"][1], out["1"][1]
    assert a.shape == b.shape
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)


def test_fallback_flag_values(monkeypatch):
    for v in ("1", "true", "YES"):
        env = dict(os.environ, REACTORGP_DISABLE_NUMBA=v)
        res = subprocess.run([sys.executable, "-c",
                              "from reactorgp import USE_NUMBA; print(USE_NUMBA)"],
                             env=env, capture_output=True, text=True, check=True)
        assert res.stdout.strip() == "False"
