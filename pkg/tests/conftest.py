"""Shared helpers for the test suite.

BLAS threads are pinned before numpy's first import so that every timing
assertion in the suite compares single-threaded runs.
"""

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402

from mixerbench import tensor as T  # noqa: E402


def central_diff(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Elementwise central-difference gradient of scalar ``f`` at ``x``.

    ``f`` must treat its argument as read-only; the array is perturbed in
    place and restored.
    """
    grad = np.zeros(x.shape, dtype=np.float64)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        up = f(x)
        flat[i] = keep - eps
        down = f(x)
        flat[i] = keep
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def tape_loss(build, arrays, weights):
    """Run ``build`` over fresh float64 parameters under a new tape.

    Returns (tape, params, loss) where loss is the weighted sum of the
    built output; weighting makes the cotangent non-constant.
    """
    with T.Tape() as tape:
        params = [T.parameter(a.copy(), dtype=np.float64) for a in arrays]
        out = build(params)
        loss = T.reduce_sum(out * T.constant(weights, dtype=np.float64))
    return tape, params, loss
