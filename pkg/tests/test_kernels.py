import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mibench import _pykernels

ckernels = pytest.importorskip("mibench._ckernels")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-20, 20), min_size=1, max_size=14), st.integers(-60, 60))
def test_signflip_backends_agree(values, threshold):
    d = np.array(values, dtype=float) / 4
    assert ckernels.signflip_count(d, threshold / 4) == _pykernels.signflip_count(d, threshold / 4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=25))
def test_signed_rank_backends_agree(ranks2):
    r = np.array(ranks2, dtype=np.int64)
    assert np.array_equal(ckernels.signed_rank_counts(r), _pykernels.signed_rank_counts(r))
    # the counts are a distribution over all 2^n sign patterns
    assert ckernels.signed_rank_counts(r).sum() == 2 ** r.size


@pytest.mark.parametrize("seed", range(5))
def test_smo_backends_agree(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((30, 4))
    y = np.where(X[:, 0] + 0.5 * rng.standard_normal(30) > 0, 1.0, -1.0)
    Q = np.ascontiguousarray(np.outer(y, y) * (X @ X.T))
    out = []
    for impl in (ckernels, _pykernels):
        alpha, G = np.zeros(30), -np.ones(30)
        it, conv = impl.smo_solve(Q, y, 2.0, alpha, G, 1e-10, 10**6)
        out.append((it, conv, alpha))
    assert out[0][:2] == out[1][:2]
    assert np.allclose(out[0][2], out[1][2], atol=1e-10)


def backend_in_subprocess(env_value):
    env = {k: v for k, v in os.environ.items() if k != "MIBENCH_PURE_PYTHON"}
    if env_value is not None:
        env["MIBENCH_PURE_PYTHON"] = env_value
    code = ("from mibench import kernels, metastats; "
            "print(kernels.BACKEND, metastats.perm_paired_t([0.1, 0.3, -0.05, 0.2, 0.15]).pvalue)")
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                          check=True).stdout.split()


def test_env_forces_fallback():
    compiled, p1 = backend_in_subprocess(None)
    pure, p2 = backend_in_subprocess("1")
    assert (compiled, pure) == ("cython", "python")
    assert p1 == p2 == repr(2 / 32)
