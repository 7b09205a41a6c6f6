"""Central-difference verification of every primitive's adjoint.

Each case builds a scalar weighted-sum loss over the primitive's output
from float64 leaf parameters; the analytic gradient from one backward
pass must match elementwise central differences on every input.
"""

from dataclasses import dataclass

import numpy as np
import pytest

from mixerbench import fourier, mixers
from mixerbench import tensor as T

from conftest import central_diff, tape_loss


@dataclass
class GradCase:
    name: str
    build: callable          # list of Tensors -> Tensor
    make: callable           # rng -> list of arrays


def _n(rng, *shape):
    return rng.normal(size=shape)


def _pos(rng, *shape):
    return np.abs(rng.normal(size=shape)) + 0.5


CASES = [
    GradCase("add", lambda p: T.add(p[0], p[1]),
             lambda r: [_n(r, 3, 4), _n(r, 3, 4)]),
    GradCase("add_broadcast", lambda p: T.add(p[0], p[1]),
             lambda r: [_n(r, 3, 4), _n(r, 4)]),
    GradCase("sub", lambda p: T.sub(p[0], p[1]),
             lambda r: [_n(r, 2, 3), _n(r, 3)]),
    GradCase("mul", lambda p: T.mul(p[0], p[1]),
             lambda r: [_n(r, 3, 4), _n(r, 3, 4)]),
    GradCase("mul_broadcast", lambda p: T.mul(p[0], p[1]),
             lambda r: [_n(r, 2, 3, 4), _n(r, 1, 4)]),
    GradCase("add_scalar", lambda p: T.add_scalar(p[0], 1.7),
             lambda r: [_n(r, 5)]),
    GradCase("mul_scalar", lambda p: T.mul_scalar(p[0], -2.5),
             lambda r: [_n(r, 5)]),
    GradCase("exp", lambda p: T.exp(p[0]), lambda r: [_n(r, 4)]),
    GradCase("log", lambda p: T.log(p[0]), lambda r: [_pos(r, 4)]),
    GradCase("sqrt", lambda p: T.sqrt(p[0]), lambda r: [_pos(r, 4)]),
    GradCase("reciprocal", lambda p: T.reciprocal(p[0]), lambda r: [_pos(r, 4)]),
    GradCase("silu", lambda p: T.silu(p[0]), lambda r: [_n(r, 6)]),
    GradCase("gelu", lambda p: T.gelu(p[0]), lambda r: [_n(r, 6)]),
    GradCase("softplus", lambda p: T.softplus(p[0]), lambda r: [_n(r, 6)]),
    GradCase("matmul", lambda p: T.matmul(p[0], p[1]),
             lambda r: [_n(r, 3, 4), _n(r, 4, 2)]),
    GradCase("matmul_batched", lambda p: T.matmul(p[0], p[1]),
             lambda r: [_n(r, 2, 3, 4), _n(r, 2, 4, 2)]),
    GradCase("matmul_shared_rhs", lambda p: T.matmul(p[0], p[1]),
             lambda r: [_n(r, 2, 3, 4), _n(r, 4, 2)]),
    GradCase("transpose", lambda p: T.transpose(p[0], (1, 2, 0)),
             lambda r: [_n(r, 2, 3, 4)]),
    GradCase("reshape", lambda p: T.reshape(p[0], (6, 2)),
             lambda r: [_n(r, 3, 4)]),
    GradCase("crop", lambda p: T.crop(p[0], ((1, 3), None, (0, 2))),
             lambda r: [_n(r, 4, 2, 3)]),
    GradCase("pad", lambda p: T.pad(p[0], ((1, 2), (0, 1))),
             lambda r: [_n(r, 3, 2)]),
    GradCase("concat", lambda p: T.concat(p, axis=1),
             lambda r: [_n(r, 2, 3), _n(r, 2, 1), _n(r, 2, 2)]),
    GradCase("roll", lambda p: T.roll(p[0], (1, -2), (0, 1)),
             lambda r: [_n(r, 3, 5)]),
    GradCase("upsample_nearest", lambda p: T.upsample_nearest(p[0], (2, 3), (1, 2)),
             lambda r: [_n(r, 2, 3, 2)]),
    GradCase("reduce_sum_all", lambda p: T.reduce_sum(p[0]),
             lambda r: [_n(r, 3, 4)]),
    GradCase("reduce_sum_axis", lambda p: T.reduce_sum(p[0], axis=1),
             lambda r: [_n(r, 3, 4)]),
    GradCase("reduce_sum_keepdims", lambda p: T.reduce_sum(p[0], axis=(0, 2), keepdims=True),
             lambda r: [_n(r, 2, 3, 4)]),
    GradCase("reduce_mean", lambda p: T.reduce_mean(p[0], axis=0),
             lambda r: [_n(r, 4, 3)]),
    GradCase("softmax", lambda p: T.softmax(p[0], axis=-1),
             lambda r: [_n(r, 3, 5)]),
    GradCase("softmax_biased",
             lambda p: T.softmax(p[0], axis=-1,
                                 bias=np.array([0.0, -np.inf, 0.0, 0.0, -np.inf])),
             lambda r: [_n(r, 3, 5)]),
    GradCase("layer_norm", lambda p: T.layer_norm(p[0], p[1], p[2]),
             lambda r: [_n(r, 3, 6), _pos(r, 6), _n(r, 6)]),
    GradCase("depthwise_conv1d", lambda p: T.depthwise_conv1d(p[0], p[1]),
             lambda r: [_n(r, 3, 8), _n(r, 3, 5)]),
    GradCase("embedding",
             lambda p: T.embedding_lookup(p[0], np.array([0, 2, 2, 1])),
             lambda r: [_n(r, 4, 3)]),
    GradCase("rfft", lambda p: fourier.rfft(p[0]), lambda r: [_n(r, 2, 8)]),
    GradCase("irfft", lambda p: fourier.irfft(p[0], 8),
             lambda r: [_n(r, 2, 5, 2)]),
    GradCase("cmul", lambda p: fourier.cmul(p[0], p[1]),
             lambda r: [_n(r, 2, 5, 2), _n(r, 2, 5, 2)]),
    GradCase("fft_linear_conv", lambda p: fourier.fft_linear_conv(p[0], p[1]),
             lambda r: [_n(r, 2, 6), _n(r, 2, 6)]),
    GradCase("selective_scan",
             lambda p: mixers.selective_scan(*p),
             lambda r: [_n(r, 5, 3),                      # u
                        np.abs(_n(r, 5, 3)) * 0.5 + 0.1,  # delta > 0
                        -np.abs(_n(r, 3, 2)) - 0.2,       # a < 0
                        _n(r, 5, 2),                      # b_seq
                        _n(r, 5, 2)]),                    # c_seq
]


@pytest.mark.parametrize("case", CASES, ids=lambda c: c.name)
def test_adjoint_matches_central_differences(case):
    rng = np.random.default_rng(abs(hash(case.name)) % 2**32)
    arrays = case.make(rng)

    out_shape = case.build([T.constant(a, dtype=np.float64) for a in arrays]).shape
    weights = rng.normal(size=out_shape)

    tape, params, loss = tape_loss(case.build, arrays, weights)
    T.backward(tape, loss)

    for k in range(len(arrays)):
        def value_at(x, k=k):
            trial = [a if j != k else x for j, a in enumerate(arrays)]
            _, _, trial_loss = tape_loss(case.build, trial, weights)
            return float(trial_loss.data)

        fd = central_diff(value_at, arrays[k].copy())
        analytic = params[k].grad.data if params[k].grad is not None else np.zeros_like(fd)
        np.testing.assert_allclose(
            analytic, fd, rtol=1e-5, atol=1e-7,
            err_msg=f"{case.name}: input {k} adjoint mismatch",
        )


def test_every_registered_primitive_is_covered():
    covered = {
        "add", "sub", "mul", "add_scalar", "mul_scalar", "exp", "log", "sqrt",
        "reciprocal", "silu", "gelu", "softplus", "matmul", "transpose",
        "reshape", "slice", "pad", "concat", "roll", "upsample_nearest",
        "reduce_sum", "reduce_mean", "softmax", "layer_norm",
        "depthwise_conv1d", "embedding", "rfft", "irfft", "cmul",
        "selective_scan",
    }
    assert set(T.registered_primitives()) == covered
