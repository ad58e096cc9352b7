import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtpinn import _backend, _fallback
from dtpinn.sparse import from_dense

kernels = pytest.importorskip("dtpinn._kernels")


def test_backend_flags():
    assert _backend.BACKEND in ("cython", "python")
    assert _backend.COMPILED == (_backend.kernels is not _fallback)


def test_env_forces_fallback():
    env = dict(os.environ, DTPINN_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from dtpinn import _backend; print(_backend.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 2**31),
       st.sampled_from([np.float32, np.float64]))
def test_spmv_bit_identical(r, c, seed, dtype):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((r, c))
    a[rng.random((r, c)) < 0.6] = 0
    m = from_dense(a, dtype=dtype)
    v = rng.standard_normal(c).astype(dtype)
    o1, o2 = np.empty(r, dtype=dtype), np.empty(r, dtype=dtype)
    kernels.csr_spmv(m.row_ptr, m.col_idx, m.values, v, o1)
    _fallback.csr_spmv(m.row_ptr, m.col_idx, m.values, v, o2)
    np.testing.assert_array_equal(o1, o2)


def test_spmm_bit_identical(rng):
    a = rng.standard_normal((40, 50))
    a[rng.random((40, 50)) < 0.8] = 0
    m = from_dense(a)
    V = rng.standard_normal((50, 6))
    o1, o2 = np.empty((40, 6)), np.empty((40, 6))
    kernels.csr_spmm(m.row_ptr, m.col_idx, m.values, V, o1)
    _fallback.csr_spmm(m.row_ptr, m.col_idx, m.values, V, o2)
    np.testing.assert_array_equal(o1, o2)


@pytest.mark.parametrize("n_dir,order", [(0, 0), (1, 1), (3, 1), (2, 2)])
def test_jet_tanh_kernels_agree(rng, n_dir, order):
    K, B, W = 1 + n_dir * order, 17, 9
    Z = rng.standard_normal((K, B, W))
    T = np.tanh(Z[0])
    G = rng.standard_normal((K, B, W))
    outs = []
    for mod in (kernels, _fallback):
        A = np.empty_like(Z)
        GZ = np.empty_like(G)
        mod.jet_tanh_forward(Z, n_dir, order, A, T)
        mod.jet_tanh_backward(G, Z, T, n_dir, order, GZ)
        outs.append((A, GZ))
    np.testing.assert_allclose(outs[0][0], outs[1][0], rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(outs[0][1], outs[1][1], rtol=1e-13, atol=1e-14)


@pytest.mark.parametrize("amp,petals", [(0.0, 5), (0.25, 5)])
def test_poisson_disk_bit_identical(amp, petals):
    seeds = np.array([[np.cos(a), np.sin(a)] for a in np.linspace(0, 2 * np.pi, 40, endpoint=False)])
    uni = np.random.default_rng(3).random(60_000)
    r1 = kernels.poisson_disk(seeds, 0.15, amp, petals, 0.03, 30, uni, 1000)
    r2 = _fallback.poisson_disk(seeds, 0.15, amp, petals, 0.03, 30, uni, 1000)
    assert r1[1] == r2[1] and r1[2] == r2[2]
    np.testing.assert_array_equal(np.asarray(r1[0])[:r1[1]], np.asarray(r2[0])[:r2[1]])


def test_clouds_identical_across_backends():
    code = ("import hashlib; from dtpinn.geometry import DomainShape, generate_nodes; "
            "c = generate_nodes(DomainShape.star(), 300, seed=2); "
            "print(hashlib.sha256(c.extended.tobytes()).hexdigest())")
    digests = set()
    for flag in ("", "1"):
        env = dict(os.environ)
        env.pop("DTPINN_PURE_PYTHON", None)
        if flag:
            env["DTPINN_PURE_PYTHON"] = flag
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True)
        digests.add(out.stdout.strip())
    assert len(digests) == 1
