"""Dense float tensors with taped reverse-mode automatic differentiation.

The value type wraps a contiguous row-major numpy buffer.  Primitive
applications are recorded on an explicitly managed tape and replayed in
reverse to accumulate gradients.  Views are always realized by copy, so
every tensor owns its buffer and the allocator can account live bytes
exactly.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf, expit

__all__ = [
    "MemoryBudgetExceeded",
    "Tensor",
    "Tape",
    "alloc_stats",
    "reset_alloc_stats",
    "memory_budget",
    "no_finite_checks",
    "finite_checks_enabled",
    "primitive_forward",
    "register_primitive",
    "backward",
    "constant",
    "parameter",
    "zeros",
]

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class MemoryBudgetExceeded(RuntimeError):
    """Raised when a new buffer would push live tensor bytes over the budget."""


def _contiguous(arr) -> np.ndarray:
    # ascontiguousarray would promote 0-d arrays to rank one; avoid that.
    arr = np.asarray(arr)
    return arr if arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)


class _Allocator:
    __slots__ = ("current_bytes", "peak_bytes", "budget_bytes")

    def __init__(self) -> None:
        self.current_bytes = 0
        self.peak_bytes = 0
        self.budget_bytes: int | None = None


_ALLOC = _Allocator()

# Debug assertion on primitive outputs.  Timed benchmark runs disable it.
_FINITE_CHECKS = True


def alloc_stats() -> dict:
    """Live and high-water tensor buffer bytes."""
    return {"current_bytes": _ALLOC.current_bytes, "peak_bytes": _ALLOC.peak_bytes}


def reset_alloc_stats() -> None:
    """Reset the high-water mark down to the currently live byte count."""
    _ALLOC.peak_bytes = _ALLOC.current_bytes


@contextmanager
def memory_budget(nbytes: int | None):
    """Fail any allocation that would push live tensor bytes over ``nbytes``."""
    previous = _ALLOC.budget_bytes
    _ALLOC.budget_bytes = nbytes
    try:
        yield
    finally:
        _ALLOC.budget_bytes = previous


@contextmanager
def no_finite_checks():
    """Disable the non-finite output assertion inside the block."""
    global _FINITE_CHECKS
    previous = _FINITE_CHECKS
    _FINITE_CHECKS = False
    try:
        yield
    finally:
        _FINITE_CHECKS = previous


def finite_checks_enabled() -> bool:
    return _FINITE_CHECKS


def _check_finite(op_id: str, arr: np.ndarray) -> None:
    if not _FINITE_CHECKS or arr.size == 0:
        return
    # A single pass over the buffer: any inf/nan poisons the sum.
    if not math.isfinite(float(np.sum(arr))):
        raise FloatingPointError(f"primitive {op_id!r} produced non-finite values")


class Tensor:
    """Immutable dense array of float32 or float64 values.

    ``grad_tracked`` marks leaves whose gradients should be accumulated by
    :func:`backward`.  Outputs of primitives applied under an active tape
    inherit tracking from their inputs.
    """

    __slots__ = ("data", "grad_tracked", "grad", "_nbytes")

    def __init__(self, data, dtype=None, grad_tracked: bool = False):
        arr = np.array(data, dtype=dtype, order="C", copy=True)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad_tracked = grad_tracked
        self.grad: Tensor | None = None
        self._register(arr.nbytes)

    @classmethod
    def _wrap(cls, arr: np.ndarray, grad_tracked: bool = False) -> "Tensor":
        # Internal constructor: takes ownership of a freshly computed buffer.
        out = object.__new__(cls)
        arr = _contiguous(arr)
        out.data = arr
        out.grad_tracked = grad_tracked
        out.grad = None
        out._register(arr.nbytes)
        return out

    def _register(self, nbytes: int) -> None:
        alloc = _ALLOC
        if alloc.budget_bytes is not None and alloc.current_bytes + nbytes > alloc.budget_bytes:
            self._nbytes = 0
            raise MemoryBudgetExceeded(
                f"allocating {nbytes} bytes would exceed the memory budget of "
                f"{alloc.budget_bytes} bytes ({alloc.current_bytes} bytes live)"
            )
        self._nbytes = nbytes
        alloc.current_bytes += nbytes
        if alloc.current_bytes > alloc.peak_bytes:
            alloc.peak_bytes = alloc.current_bytes

    def __del__(self):
        try:
            _ALLOC.current_bytes -= self._nbytes
        except Exception:
            pass

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        """Copy of the underlying buffer."""
        return self.data.copy()

    def __repr__(self) -> str:
        flag = ", grad_tracked" if self.grad_tracked else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # Arithmetic sugar; every path goes through the primitive registry.
    def __add__(self, other):
        return add_scalar(self, other) if np.isscalar(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add_scalar(self, -other) if np.isscalar(other) else sub(self, other)

    def __rsub__(self, other):
        return add_scalar(mul_scalar(self, -1.0), other)

    def __mul__(self, other):
        return mul_scalar(self, other) if np.isscalar(other) else mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data, dtype=np.float32) -> Tensor:
    return Tensor(data, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, dtype=dtype, grad_tracked=True)


def zeros(shape, dtype=np.float32, grad_tracked: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), grad_tracked=grad_tracked)


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; primitives applied inside the block whose
    inputs are grad tracked get recorded.  A tape may be consumed by at
    most one backward pass.
    """

    __slots__ = ("entries", "consumed")

    def __init__(self) -> None:
        self.entries: list = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self.entries)


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


# ---------------------------------------------------------------------------
# Primitive registry
# ---------------------------------------------------------------------------
#
# forward(inputs, attrs) -> (out_array, saved)
# adjoint(inputs, attrs, saved, out_array, grad) -> list of per-input
#     gradient arrays (None for inputs that need no gradient).

_PRIMITIVES: dict[str, tuple] = {}


def register_primitive(op_id: str, forward, adjoint) -> None:
    if op_id in _PRIMITIVES:
        raise ValueError(f"primitive {op_id!r} already registered")
    _PRIMITIVES[op_id] = (forward, adjoint)


def registered_primitives() -> tuple:
    return tuple(sorted(_PRIMITIVES))


def primitive_forward(op_id: str, inputs, attrs: dict | None = None) -> Tensor:
    """Apply a registered primitive and record it on the active tape."""
    try:
        fwd, _ = _PRIMITIVES[op_id]
    except KeyError:
        raise ValueError(f"unknown primitive {op_id!r}") from None
    attrs = attrs or {}
    with np.errstate(all="ignore"):
        out_data, saved = fwd(inputs, attrs)
    _check_finite(op_id, out_data)
    tape = _active_tape()
    tracked = tape is not None and any(t.grad_tracked for t in inputs)
    out = Tensor._wrap(out_data, grad_tracked=tracked)
    if tracked:
        tape.entries.append((op_id, tuple(inputs), out, attrs, saved))
    return out


def backward(tape: Tape, loss: Tensor) -> dict:
    """Replay ``tape`` in reverse from ``loss``; returns tensor -> gradient.

    The returned mapping covers every tensor reached from the loss; query a
    leaf that was never reached and you get nothing back, which callers
    should read as a zero gradient.  ``grad`` is also set on reached leaves.
    """
    if tape.consumed:
        raise RuntimeError("tape has already been consumed by a backward pass")
    if loss.shape != ():
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if not any(entry[2] is loss for entry in tape.entries):
        raise ValueError("loss is not an output recorded on this tape")
    tape.consumed = True

    grads: dict[Tensor, Tensor] = {loss: Tensor._wrap(np.ones((), dtype=loss.dtype))}
    for op_id, inputs, out, attrs, saved in reversed(tape.entries):
        g = grads.pop(out, None)
        if g is None:
            continue
        adjoint = _PRIMITIVES[op_id][1]
        with np.errstate(all="ignore"):
            input_grads = adjoint(inputs, attrs, saved, out.data, g.data)
        for tensor, ig in zip(inputs, input_grads):
            if ig is None or not tensor.grad_tracked:
                continue
            previous = grads.get(tensor)
            if previous is None:
                grads[tensor] = Tensor._wrap(np.asarray(ig, dtype=tensor.dtype))
            else:
                grads[tensor] = Tensor._wrap(previous.data + ig)
        if out is not loss and out in grads:  # pragma: no cover - defensive
            del grads[out]
    for tensor, grad in grads.items():
        tensor.grad = grad
    return grads


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _normalize_axes(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if np.isscalar(axis):
        axis = (int(axis),)
    return tuple(a % ndim for a in axis)


# -- elementwise binary ------------------------------------------------------

def _add_fwd(inputs, attrs):
    a, b = inputs
    return a.data + b.data, None


def _add_adj(inputs, attrs, saved, out, g):
    a, b = inputs
    return [_sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape)]


def _sub_fwd(inputs, attrs):
    a, b = inputs
    return a.data - b.data, None


def _sub_adj(inputs, attrs, saved, out, g):
    a, b = inputs
    return [_sum_to_shape(g, a.shape), _sum_to_shape(-g, b.shape)]


def _mul_fwd(inputs, attrs):
    a, b = inputs
    return a.data * b.data, None


def _mul_adj(inputs, attrs, saved, out, g):
    a, b = inputs
    return [_sum_to_shape(g * b.data, a.shape), _sum_to_shape(g * a.data, b.shape)]


def _add_scalar_fwd(inputs, attrs):
    (a,) = inputs
    return a.data + a.dtype.type(attrs["value"]), None


def _add_scalar_adj(inputs, attrs, saved, out, g):
    return [g]


def _mul_scalar_fwd(inputs, attrs):
    (a,) = inputs
    return a.data * a.dtype.type(attrs["value"]), None


def _mul_scalar_adj(inputs, attrs, saved, out, g):
    (a,) = inputs
    return [g * a.dtype.type(attrs["value"])]


# -- elementwise unary -------------------------------------------------------

def _exp_fwd(inputs, attrs):
    return np.exp(inputs[0].data), None


def _exp_adj(inputs, attrs, saved, out, g):
    return [g * out]


def _log_fwd(inputs, attrs):
    return np.log(inputs[0].data), None


def _log_adj(inputs, attrs, saved, out, g):
    return [g / inputs[0].data]


def _sqrt_fwd(inputs, attrs):
    return np.sqrt(inputs[0].data), None


def _sqrt_adj(inputs, attrs, saved, out, g):
    return [g * 0.5 / out]


def _reciprocal_fwd(inputs, attrs):
    return 1.0 / inputs[0].data, None


def _reciprocal_adj(inputs, attrs, saved, out, g):
    return [-g * out * out]


def _silu_fwd(inputs, attrs):
    x = inputs[0].data
    s = expit(x)
    return x * s, s


def _silu_adj(inputs, attrs, saved, out, g):
    x = inputs[0].data
    s = saved
    return [g * (s * (1.0 + x * (1.0 - s)))]


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _gelu_fwd(inputs, attrs):
    x = inputs[0].data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * cdf, cdf


def _gelu_adj(inputs, attrs, saved, out, g):
    x = inputs[0].data
    cdf = saved
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return [g * (cdf + x * pdf)]


def _softplus_fwd(inputs, attrs):
    x = inputs[0].data
    return np.logaddexp(x.dtype.type(0.0), x), None


def _softplus_adj(inputs, attrs, saved, out, g):
    return [g * expit(inputs[0].data)]


# -- matmul ------------------------------------------------------------------

def _matmul_fwd(inputs, attrs):
    a, b = inputs
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul requires operands of rank >= 2")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul inner dimensions differ: {ad.shape} @ {bd.shape}")
    if bd.ndim != 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ValueError(f"matmul batch dimensions differ: {ad.shape} @ {bd.shape}")
    return ad @ bd, None


def _matmul_adj(inputs, attrs, saved, out, g):
    a, b = inputs
    ad, bd = a.data, b.data
    da = g @ np.swapaxes(bd, -1, -2)
    if bd.ndim == 2 and ad.ndim > 2:
        db = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    else:
        db = np.swapaxes(ad, -1, -2) @ g
    return [da, db]


# -- shape movement ----------------------------------------------------------

def _transpose_fwd(inputs, attrs):
    return inputs[0].data.transpose(attrs["axes"]).copy(), None


def _transpose_adj(inputs, attrs, saved, out, g):
    axes = attrs["axes"]
    inverse = np.argsort(axes)
    return [g.transpose(inverse)]


def _reshape_fwd(inputs, attrs):
    return inputs[0].data.reshape(attrs["shape"]).copy(), None


def _reshape_adj(inputs, attrs, saved, out, g):
    return [g.reshape(inputs[0].shape)]


def _slice_fwd(inputs, attrs):
    key = tuple(slice(lo, hi) for lo, hi in attrs["bounds"])
    return inputs[0].data[key].copy(), None


def _slice_adj(inputs, attrs, saved, out, g):
    dx = np.zeros(inputs[0].shape, dtype=g.dtype)
    key = tuple(slice(lo, hi) for lo, hi in attrs["bounds"])
    dx[key] = g
    return [dx]


def _pad_fwd(inputs, attrs):
    return np.pad(inputs[0].data, attrs["widths"]), None


def _pad_adj(inputs, attrs, saved, out, g):
    key = tuple(
        slice(before, before + extent)
        for (before, _), extent in zip(attrs["widths"], inputs[0].shape)
    )
    return [g[key]]


def _concat_fwd(inputs, attrs):
    return np.concatenate([t.data for t in inputs], axis=attrs["axis"]), None


def _concat_adj(inputs, attrs, saved, out, g):
    axis = attrs["axis"]
    sizes = [t.shape[axis] for t in inputs]
    splits = np.cumsum(sizes)[:-1]
    return list(np.split(g, splits, axis=axis))


def _roll_fwd(inputs, attrs):
    return np.roll(inputs[0].data, attrs["shifts"], axis=attrs["axes"]), None


def _roll_adj(inputs, attrs, saved, out, g):
    shifts = tuple(-s for s in attrs["shifts"])
    return [np.roll(g, shifts, axis=attrs["axes"])]


def _upsample_fwd(inputs, attrs):
    x = inputs[0].data
    for axis, factor in zip(attrs["axes"], attrs["factors"]):
        x = np.repeat(x, factor, axis=axis)
    return x, None


def _upsample_adj(inputs, attrs, saved, out, g):
    for axis, factor in zip(reversed(attrs["axes"]), reversed(attrs["factors"])):
        shape = list(g.shape)
        shape[axis] //= factor
        shape.insert(axis + 1, factor)
        g = g.reshape(shape).sum(axis=axis + 1)
    return [g]


# -- reductions --------------------------------------------------------------

def _reduce_sum_fwd(inputs, attrs):
    out = inputs[0].data.sum(axis=attrs["axis"], keepdims=attrs["keepdims"])
    return np.asarray(out), None


def _expand_reduced(g, in_shape, axis, keepdims):
    axes = _normalize_axes(axis, len(in_shape))
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, in_shape)


def _reduce_sum_adj(inputs, attrs, saved, out, g):
    return [_expand_reduced(g, inputs[0].shape, attrs["axis"], attrs["keepdims"]).copy()]


def _reduce_mean_fwd(inputs, attrs):
    out = inputs[0].data.mean(axis=attrs["axis"], keepdims=attrs["keepdims"])
    return np.asarray(out), None


def _reduce_mean_adj(inputs, attrs, saved, out, g):
    in_shape = inputs[0].shape
    axes = _normalize_axes(attrs["axis"], len(in_shape))
    count = 1
    for a in axes:
        count *= in_shape[a]
    expanded = _expand_reduced(g, in_shape, attrs["axis"], attrs["keepdims"])
    return [expanded / count]


# -- softmax / layer norm ----------------------------------------------------

def _softmax_fwd(inputs, attrs):
    x = inputs[0].data
    axis = attrs["axis"]
    bias = attrs.get("bias")
    if bias is not None:
        # The bias may contain -inf sentinels; they never reach a tensor,
        # exp maps them to exactly zero weight.
        x = x + bias
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True), None


def _softmax_adj(inputs, attrs, saved, out, g):
    axis = attrs["axis"]
    inner = (g * out).sum(axis=axis, keepdims=True)
    return [out * (g - inner)]


def _layer_norm_fwd(inputs, attrs):
    x, gamma, beta = (t.data for t in inputs)
    eps = attrs["eps"]
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    return xhat * gamma + beta, (xhat, inv)


def _layer_norm_adj(inputs, attrs, saved, out, g):
    x, gamma, beta = inputs
    xhat, inv = saved
    gx = g * gamma.data
    mean_gx = gx.mean(axis=-1, keepdims=True)
    mean_gx_xhat = (gx * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (gx - mean_gx - xhat * mean_gx_xhat)
    reduce_axes = tuple(range(g.ndim - 1))
    dgamma = (g * xhat).sum(axis=reduce_axes)
    dbeta = g.sum(axis=reduce_axes)
    return [dx, dgamma, dbeta]


# -- depthwise 1-d convolution ----------------------------------------------

def _depthwise_conv1d_fwd(inputs, attrs):
    x, w = inputs[0].data, inputs[1].data
    channels, k = w.shape
    if x.shape[-2] != channels:
        raise ValueError(
            f"depthwise_conv1d channel mismatch: signal {x.shape} vs kernel {w.shape}"
        )
    left = (k - 1) // 2
    right = k - 1 - left
    widths = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    xp = np.pad(x, widths)
    n = x.shape[-1]
    y = np.zeros_like(x)
    for j in range(k):
        y += xp[..., j : j + n] * w[:, j, None]
    return y, xp


def _depthwise_conv1d_adj(inputs, attrs, saved, out, g):
    x, w = inputs[0].data, inputs[1].data
    xp = saved
    channels, k = w.shape
    left = (k - 1) // 2
    n = x.shape[-1]
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    lead = tuple(range(g.ndim - 2))
    for j in range(k):
        dxp[..., j : j + n] += g * w[:, j, None]
        dw[:, j] = (g * xp[..., j : j + n]).sum(axis=lead + (g.ndim - 1,))
    return [dxp[..., left : left + n], dw]


# -- embedding lookup --------------------------------------------------------

def _embedding_fwd(inputs, attrs):
    table = inputs[0].data
    indices = attrs["indices"]
    return table[indices], None


def _embedding_adj(inputs, attrs, saved, out, g):
    dt = np.zeros(inputs[0].shape, dtype=g.dtype)
    np.add.at(dt, attrs["indices"], g)
    return [dt]


for _op, _fwd, _adj in [
    ("add", _add_fwd, _add_adj),
    ("sub", _sub_fwd, _sub_adj),
    ("mul", _mul_fwd, _mul_adj),
    ("add_scalar", _add_scalar_fwd, _add_scalar_adj),
    ("mul_scalar", _mul_scalar_fwd, _mul_scalar_adj),
    ("exp", _exp_fwd, _exp_adj),
    ("log", _log_fwd, _log_adj),
    ("sqrt", _sqrt_fwd, _sqrt_adj),
    ("reciprocal", _reciprocal_fwd, _reciprocal_adj),
    ("silu", _silu_fwd, _silu_adj),
    ("gelu", _gelu_fwd, _gelu_adj),
    ("softplus", _softplus_fwd, _softplus_adj),
    ("matmul", _matmul_fwd, _matmul_adj),
    ("transpose", _transpose_fwd, _transpose_adj),
    ("reshape", _reshape_fwd, _reshape_adj),
    ("slice", _slice_fwd, _slice_adj),
    ("pad", _pad_fwd, _pad_adj),
    ("concat", _concat_fwd, _concat_adj),
    ("roll", _roll_fwd, _roll_adj),
    ("upsample_nearest", _upsample_fwd, _upsample_adj),
    ("reduce_sum", _reduce_sum_fwd, _reduce_sum_adj),
    ("reduce_mean", _reduce_mean_fwd, _reduce_mean_adj),
    ("softmax", _softmax_fwd, _softmax_adj),
    ("layer_norm", _layer_norm_fwd, _layer_norm_adj),
    ("depthwise_conv1d", _depthwise_conv1d_fwd, _depthwise_conv1d_adj),
    ("embedding", _embedding_fwd, _embedding_adj),
]:
    register_primitive(_op, _fwd, _adj)


# ---------------------------------------------------------------------------
# Callable wrappers
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return primitive_forward("add", (a, b))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return primitive_forward("sub", (a, b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return primitive_forward("mul", (a, b))


def add_scalar(a: Tensor, value: float) -> Tensor:
    return primitive_forward("add_scalar", (a,), {"value": float(value)})


def mul_scalar(a: Tensor, value: float) -> Tensor:
    return primitive_forward("mul_scalar", (a,), {"value": float(value)})


def exp(a: Tensor) -> Tensor:
    return primitive_forward("exp", (a,))


def log(a: Tensor) -> Tensor:
    return primitive_forward("log", (a,))


def sqrt(a: Tensor) -> Tensor:
    return primitive_forward("sqrt", (a,))


def reciprocal(a: Tensor) -> Tensor:
    return primitive_forward("reciprocal", (a,))


def silu(a: Tensor) -> Tensor:
    return primitive_forward("silu", (a,))


def gelu(a: Tensor) -> Tensor:
    return primitive_forward("gelu", (a,))


def softplus(a: Tensor) -> Tensor:
    return primitive_forward("softplus", (a,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return primitive_forward("matmul", (a, b))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    return primitive_forward("transpose", (a,), {"axes": tuple(axes)})


def reshape(a: Tensor, shape) -> Tensor:
    return primitive_forward("reshape", (a,), {"shape": tuple(shape)})


def crop(a: Tensor, bounds) -> Tensor:
    """Slice with per-axis (start, stop) bounds; None keeps the full axis."""
    full = tuple(
        (0, a.shape[i]) if b is None else (int(b[0]), int(b[1]))
        for i, b in enumerate(bounds)
    )
    return primitive_forward("slice", (a,), {"bounds": full})


def pad(a: Tensor, widths) -> Tensor:
    return primitive_forward("pad", (a,), {"widths": tuple(tuple(w) for w in widths)})


def concat(tensors, axis: int = 0) -> Tensor:
    return primitive_forward("concat", tuple(tensors), {"axis": int(axis)})


def roll(a: Tensor, shifts, axes) -> Tensor:
    return primitive_forward("roll", (a,), {"shifts": tuple(shifts), "axes": tuple(axes)})


def upsample_nearest(a: Tensor, factors, axes) -> Tensor:
    return primitive_forward(
        "upsample_nearest", (a,), {"factors": tuple(factors), "axes": tuple(axes)}
    )


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return primitive_forward("reduce_sum", (a,), {"axis": axis, "keepdims": keepdims})


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return primitive_forward("reduce_mean", (a,), {"axis": axis, "keepdims": keepdims})


def softmax(a: Tensor, axis: int = -1, bias: np.ndarray | None = None) -> Tensor:
    """Max-subtracted softmax along ``axis``.

    ``bias`` is an additive constant applied before normalization; entries
    of -inf yield exactly zero weight.  It never becomes a tensor, so the
    finite-output assertion still holds for all stored values.
    """
    attrs: dict = {"axis": int(axis)}
    if bias is not None:
        attrs["bias"] = bias
    return primitive_forward("softmax", (a,), attrs)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    return primitive_forward("layer_norm", (x, gamma, beta), {"eps": float(eps)})


def depthwise_conv1d(x: Tensor, w: Tensor) -> Tensor:
    """Per-channel convolution along the last axis with symmetric zero padding.

    ``x`` has shape (..., channels, n) and ``w`` has shape (channels, k).
    """
    return primitive_forward("depthwise_conv1d", (x, w))


def embedding_lookup(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    return primitive_forward("embedding", (table,), {"indices": idx})
