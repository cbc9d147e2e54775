"""Numba and numpy kernel backends must agree; env flag selects them."""
import os
import subprocess
import sys

import numpy as np
import pytest

from evlight import _kernels as K


pairs = [
    ("im2col", "_im2col_np", "_im2col_nb"),
    ("col2im", "_col2im_np", "_col2im_nb"),
    ("dwconv_forward", "_dwconv_forward_np", "_dwconv_forward_nb"),
    ("dwconv_grad_weight", "_dwconv_grad_weight_np", "_dwconv_grad_weight_nb"),
    ("dwconv_grad_input", "_dwconv_grad_input_np", "_dwconv_grad_input_nb"),
    ("box_filter", "_box_filter_np", "_box_filter_nb"),
]

has_numba = K.BACKEND == "numba"
needs_numba = pytest.mark.skipif(not has_numba, reason="numba unavailable")


def _args_for(name, rng):
    if name == "im2col":
        return (rng.standard_normal((9, 8, 3)), 3, 1, 7, 6)
    if name == "col2im":
        return (np.ascontiguousarray(rng.standard_normal((42, 27))), 3, 1, 9, 8, 3, 7, 6)
    if name == "dwconv_forward":
        return (rng.standard_normal((8, 9, 4)), rng.standard_normal((3, 3, 4)))
    if name == "dwconv_grad_weight":
        return (rng.standard_normal((8, 9, 4)),
                np.ascontiguousarray(rng.standard_normal((6, 7, 4))), 3)
    if name == "dwconv_grad_input":
        return (np.ascontiguousarray(rng.standard_normal((6, 7, 4))),
                rng.standard_normal((3, 3, 4)))
    if name == "box_filter":
        return (np.ascontiguousarray(rng.standard_normal((9, 11))), 5)
    raise AssertionError(name)


@needs_numba
@pytest.mark.parametrize("name,np_name,nb_name", pairs)
def test_backends_agree(name, np_name, nb_name, rng):
    args = _args_for(name, rng)
    ref = getattr(K, np_name)(*args)
    got = getattr(K, nb_name)(*args)
    assert np.allclose(ref, got, atol=1e-12, rtol=1e-12)


@needs_numba
def test_voxel_deposit_backends_agree(rng):
    n = 2000
    tstar = rng.uniform(-0.4, 31.4, n)
    xs = rng.integers(0, 10, n)
    ys = rng.integers(0, 8, n)
    ps = rng.choice([-1.0, 1.0], n)
    a = np.zeros(32 * 8 * 10)
    b = np.zeros(32 * 8 * 10)
    K._voxel_deposit_np(a, tstar, xs, ys, ps, 32, 8, 10)
    K._voxel_deposit_nb(b, tstar, xs, ys, ps, 32, 8, 10)
    assert np.allclose(a, b, atol=1e-12)


def test_env_flag_selects_backend():
    code = ("import evlight._kernels as K; print(K.BACKEND)")
    for flag, expect in (("numpy", "numpy"),) + (
            (("numba", "numba"),) if has_numba else ()):
        env = dict(os.environ, EVLIGHT_BACKEND=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True, check=True)
        assert out.stdout.strip() == expect


def test_env_flag_rejects_unknown():
    env = dict(os.environ, EVLIGHT_BACKEND="cuda")
    out = subprocess.run([sys.executable, "-c", "import evlight._kernels"],
                         env=env, capture_output=True, text=True)
    assert out.returncode != 0
    assert "EVLIGHT_BACKEND" in out.stderr


def test_numpy_backend_runs_model():
    code = """
import numpy as np
import evlight as ev
from evlight import tensor as T
assert ev.BACKEND == "numpy"
rng = np.random.default_rng(0)
img = rng.uniform(0, 0.3, (16, 16, 3))
n = 100
t = np.sort(rng.integers(0, 1000, n))
s = ev.EventStream(16, 16, t, rng.integers(0, 16, n), rng.integers(0, 16, n),
                   rng.choice([-1, 1], n))
grid = ev.voxelize(s, 32, 0, 1000)
m = ev.EvLightModel(np.random.default_rng(1))
i_en, _, _ = m.forward(img, grid)
T.backward(T.mean(T.mul(i_en, i_en)))
print("ok", float(i_en.data.sum()))
"""
    env = dict(os.environ, EVLIGHT_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert out.stdout.startswith("ok")
