"""Radix-2 real FFT primitives and FFT-based causal linear convolution.

Transforms are restricted to power-of-two lengths; callers zero-pad first.
Complex spectra are represented as real tensors with a trailing axis of
size two holding (real, imaginary) parts, which keeps the tensor type
purely real while still letting gradients flow through frequency space.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, crop, pad, primitive_forward, register_primitive

__all__ = ["next_pow2", "rfft", "irfft", "cmul", "fft_linear_conv"]

_TWIDDLE_CACHE: dict = {}
_BITREV_CACHE: dict = {}


def next_pow2(n: int) -> int:
    """Smallest power of two >= n (and >= 1)."""
    m = 1
    while m < n:
        m *= 2
    return m


def _twiddles(half: int, sign: float, dtype) -> np.ndarray:
    key = (half, sign, np.dtype(dtype).char)
    cached = _TWIDDLE_CACHE.get(key)
    if cached is None:
        cached = np.exp(sign * 2j * np.pi * np.arange(half) / (2 * half)).astype(dtype)
        _TWIDDLE_CACHE[key] = cached
    return cached


def _bit_reverse(m: int) -> np.ndarray:
    cached = _BITREV_CACHE.get(m)
    if cached is None:
        idx = np.arange(m)
        rev = np.zeros(m, dtype=np.int64)
        for _ in range(m.bit_length() - 1):
            rev = (rev << 1) | (idx & 1)
            idx >>= 1
        _BITREV_CACHE[m] = cached = rev
    return cached


def _fft_core(a: np.ndarray, sign: float) -> np.ndarray:
    """Iterative decimation-in-time radix-2 transform along the last axis.

    Bottom-up butterflies touch the whole batch per level, so the Python
    overhead is O(log m) rather than O(m) for the recursive formulation.
    """
    m = a.shape[-1]
    if m == 1:
        return a
    lead = a.shape[:-1]
    x = a[..., _bit_reverse(m)]
    half = 1
    while half < m:
        y = x.reshape(*lead, m // (2 * half), 2, half)
        even = y[..., 0, :]
        odd = y[..., 1, :] * _twiddles(half, sign, a.dtype)
        x = np.empty_like(x)
        out = x.reshape(*lead, m // (2 * half), 2, half)
        out[..., 0, :] = even + odd
        out[..., 1, :] = even - odd
        half *= 2
    return x


def _complex_dtype(real_dtype) -> np.dtype:
    return np.dtype(np.complex64 if np.dtype(real_dtype) == np.float32 else np.complex128)


def _require_pow2(m: int, what: str) -> None:
    if m < 1 or m & (m - 1):
        raise ValueError(f"{what} requires a power-of-two length, got {m}")


def _rfft_fwd(inputs, attrs):
    x = inputs[0].data
    m = x.shape[-1]
    _require_pow2(m, "rfft")
    spectrum = _fft_core(x.astype(_complex_dtype(x.dtype)), -1.0)[..., : m // 2 + 1]
    return np.stack([spectrum.real, spectrum.imag], axis=-1).astype(x.dtype), None


def _rfft_adj(inputs, attrs, saved, out, g):
    x = inputs[0].data
    m = x.shape[-1]
    gc = g[..., 0] + 1j * g[..., 1]
    full = np.zeros(x.shape[:-1] + (m,), dtype=_complex_dtype(x.dtype))
    full[..., : m // 2 + 1] = gc
    # Adjoint of the real-to-halfspectrum map: no conjugate mirroring.
    return [_fft_core(full, 1.0).real.astype(x.dtype)]


def _irfft_fwd(inputs, attrs):
    p = inputs[0].data
    m = int(attrs["length"])
    _require_pow2(m, "irfft")
    bins = m // 2 + 1
    if p.shape[-2] != bins or p.shape[-1] != 2:
        raise ValueError(
            f"irfft expects shape (..., {bins}, 2) for length {m}, got {p.shape}"
        )
    spectrum = p[..., 0].astype(_complex_dtype(p.dtype)) + 1j * p[..., 1]
    spectrum[..., 0] = spectrum[..., 0].real
    if m > 1:
        spectrum[..., -1] = spectrum[..., -1].real
        mirror = np.conj(spectrum[..., -2:0:-1])
        spectrum = np.concatenate([spectrum, mirror], axis=-1)
    y = _fft_core(spectrum, 1.0).real / m
    return y.astype(p.dtype), None


def _irfft_adj(inputs, attrs, saved, out, g):
    p = inputs[0].data
    m = int(attrs["length"])
    bins = m // 2 + 1
    f = _fft_core(g.astype(_complex_dtype(p.dtype)), -1.0)[..., :bins]
    dre = (2.0 / m) * f.real
    dim = (2.0 / m) * f.imag
    dre[..., 0] *= 0.5
    dim[..., 0] = 0.0
    if m > 1:
        dre[..., -1] *= 0.5
        dim[..., -1] = 0.0
    return [np.stack([dre, dim], axis=-1).astype(p.dtype)]


def _cmul_fwd(inputs, attrs):
    a, b = inputs[0].data, inputs[1].data
    ar, ai = a[..., 0], a[..., 1]
    br, bi = b[..., 0], b[..., 1]
    return np.stack([ar * br - ai * bi, ar * bi + ai * br], axis=-1), None


def _cmul_adj(inputs, attrs, saved, out, g):
    a, b = inputs[0].data, inputs[1].data
    gr, gi = g[..., 0], g[..., 1]

    def times_conj(xr, xi):
        return np.stack([gr * xr + gi * xi, gi * xr - gr * xi], axis=-1)

    from .tensor import _sum_to_shape

    da = _sum_to_shape(times_conj(b[..., 0], b[..., 1]), inputs[0].shape)
    db = _sum_to_shape(times_conj(a[..., 0], a[..., 1]), inputs[1].shape)
    return [da, db]


register_primitive("rfft", _rfft_fwd, _rfft_adj)
register_primitive("irfft", _irfft_fwd, _irfft_adj)
register_primitive("cmul", _cmul_fwd, _cmul_adj)


def rfft(x: Tensor) -> Tensor:
    """Real FFT along the last axis (power-of-two length).

    Returns shape (..., m/2 + 1, 2) holding the non-redundant bins.
    """
    return primitive_forward("rfft", (x,))


def irfft(p: Tensor, length: int) -> Tensor:
    """Inverse of :func:`rfft` back to a real signal of ``length`` samples."""
    return primitive_forward("irfft", (p,), {"length": int(length)})


def cmul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise complex product of (..., 2) real-pair spectra."""
    return primitive_forward("cmul", (a, b))


def fft_linear_conv(u: Tensor, h: Tensor) -> Tensor:
    """Causal linear convolution: out[t] = sum_{s<=t} h[s] * u[t-s].

    Both operands share the length-n last axis (leading axes broadcast
    between them).  Internally both are zero padded to the next power of
    two >= 2n-1 so the circular product realizes the linear convolution,
    then the first n samples are kept.
    """
    n = u.shape[-1]
    if h.shape[-1] != n:
        raise ValueError(f"filter length {h.shape[-1]} != signal length {n}")
    m = next_pow2(max(2 * n - 1, 1))
    zeros = ((0, 0),)
    u_pad = pad(u, zeros * (u.ndim - 1) + ((0, m - n),))
    h_pad = pad(h, zeros * (h.ndim - 1) + ((0, m - n),))
    product = cmul(rfft(u_pad), rfft(h_pad))
    full = irfft(product, m)
    return crop(full, (None,) * (full.ndim - 1) + ((0, n),))
