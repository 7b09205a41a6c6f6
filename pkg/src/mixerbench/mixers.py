"""Token-mixing operators over (..., n, d) sequences.

Three interchangeable mixers share one calling convention: multi-head
softmax self-attention, a gated long-convolution operator whose filters
are generated implicitly from positional features, and a two-branch
selective state-space mixer.  Leading axes batch freely (Swin stacks
windows there), the last two axes are always (tokens, channels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .fourier import fft_linear_conv, next_pow2
from .tensor import Tensor, register_primitive, primitive_forward

__all__ = [
    "AttentionParams",
    "HyenaParams",
    "MambaVisionParams",
    "ShiftMask",
    "init_attention",
    "init_hyena",
    "init_mamba_vision",
    "init_mixer",
    "attention_forward",
    "attention_weights",
    "hyena_forward",
    "hyena_filters",
    "hyena_decay_envelope",
    "mamba_vision_forward",
    "selective_scan",
    "selective_scan_sequential",
    "build_shift_mask",
    "mixer_forward",
    "flop_count",
]

MIXER_KINDS = ("attention", "hyena", "mamba_vision")


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass
class AttentionParams:
    """Projection weights for multi-head softmax self-attention."""

    w_query: Tensor
    w_key: Tensor
    w_value: Tensor
    w_out: Tensor
    num_heads: int = 4


@dataclass
class HyenaParams:
    """Gated long-convolution mixer parameters.

    Filters are not stored directly: an FFN maps positional features to a
    length-n response per channel which is then windowed by a learnable
    exponential decay.  ``skip_gain`` is a per-channel passthrough added to
    each convolution so the operator can represent the identity filter
    exactly.
    """

    order: int
    w_in: Tensor
    b_in: Tensor
    w_out: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    decay_raw: Tensor
    skip_gain: Tensor
    num_freqs: int = 8


@dataclass
class MambaVisionParams:
    """Two-branch selective state-space mixer parameters.

    Branch one is projected to half width, convolved depthwise, activated,
    then run through the selective scan; branch two skips the scan.  Both
    halves concatenate back to full width for the output projection.
    """

    w_in1: Tensor
    b_in1: Tensor
    conv1_w: Tensor
    conv1_b: Tensor
    w_delta: Tensor
    b_delta: Tensor
    w_bmat: Tensor
    w_cmat: Tensor
    a_log: Tensor
    w_in2: Tensor
    b_in2: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    w_out: Tensor
    b_out: Tensor


@dataclass
class ShiftMask:
    """Additive attention bias for shifted-window region separation.

    ``bias`` has shape (num_windows, tokens, tokens) with 0 for pairs from
    the same contiguous region and -inf for pairs brought together by the
    cyclic shift; ``labels`` holds the per-token region id.
    """

    bias: np.ndarray
    labels: np.ndarray
    window_size: int
    shift: int


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def _normal(rng, shape, std, dtype):
    return T.parameter(rng.normal(0.0, std, size=shape).astype(dtype))


def init_attention(embed_dim: int, num_heads: int = 4, rng=None, dtype=np.float32) -> AttentionParams:
    if embed_dim % num_heads:
        raise ValueError(f"embed_dim {embed_dim} not divisible by num_heads {num_heads}")
    rng = rng or np.random.default_rng(0)
    d = embed_dim
    return AttentionParams(
        w_query=_normal(rng, (d, d), 0.02, dtype),
        w_key=_normal(rng, (d, d), 0.02, dtype),
        w_value=_normal(rng, (d, d), 0.02, dtype),
        w_out=_normal(rng, (d, d), 0.02, dtype),
        num_heads=num_heads,
    )


def init_hyena(
    embed_dim: int,
    order: int = 2,
    hidden: int = 32,
    num_freqs: int = 8,
    rng=None,
    dtype=np.float32,
) -> HyenaParams:
    rng = rng or np.random.default_rng(0)
    d = embed_dim
    n_feat = 2 * num_freqs + 1
    return HyenaParams(
        order=order,
        w_in=_normal(rng, (d, (order + 1) * d), 0.02, dtype),
        b_in=T.parameter(np.zeros((order + 1) * d, dtype=dtype)),
        w_out=_normal(rng, (d, d), 0.02, dtype),
        ffn_w1=_normal(rng, (n_feat, hidden), 0.2, dtype),
        ffn_b1=T.parameter(np.zeros(hidden, dtype=dtype)),
        ffn_w2=_normal(rng, (hidden, order * d), 0.02, dtype),
        ffn_b2=T.parameter(np.zeros(order * d, dtype=dtype)),
        decay_raw=T.parameter(rng.uniform(-5.0, -1.0, size=(order, d)).astype(dtype)),
        skip_gain=T.parameter(np.ones((order, d), dtype=dtype)),
        num_freqs=num_freqs,
    )


def init_mamba_vision(
    embed_dim: int,
    state_dim: int = 16,
    conv_kernel: int = 3,
    rng=None,
    dtype=np.float32,
) -> MambaVisionParams:
    if embed_dim % 2:
        raise ValueError(f"embed_dim must be even for the two-branch mixer, got {embed_dim}")
    rng = rng or np.random.default_rng(0)
    d, c, s = embed_dim, embed_dim // 2, state_dim
    a_log = np.log(np.arange(1, s + 1, dtype=np.float64))
    # Initial step size ~0.05 through softplus.
    delta_bias = math.log(math.expm1(0.05))
    return MambaVisionParams(
        w_in1=_normal(rng, (d, c), 0.02, dtype),
        b_in1=T.parameter(np.zeros(c, dtype=dtype)),
        conv1_w=_normal(rng, (c, conv_kernel), 0.2, dtype),
        conv1_b=T.parameter(np.zeros(c, dtype=dtype)),
        w_delta=_normal(rng, (c, c), 0.02, dtype),
        b_delta=T.parameter(np.full(c, delta_bias, dtype=dtype)),
        w_bmat=_normal(rng, (c, s), 0.02, dtype),
        w_cmat=_normal(rng, (c, s), 0.02, dtype),
        a_log=T.parameter(np.tile(a_log, (c, 1)).astype(dtype)),
        w_in2=_normal(rng, (d, c), 0.02, dtype),
        b_in2=T.parameter(np.zeros(c, dtype=dtype)),
        conv2_w=_normal(rng, (c, conv_kernel), 0.2, dtype),
        conv2_b=T.parameter(np.zeros(c, dtype=dtype)),
        w_out=_normal(rng, (d, d), 0.02, dtype),
        b_out=T.parameter(np.zeros(d, dtype=dtype)),
    )


def init_mixer(kind: str, embed_dim: int, num_heads: int = 4, rng=None, dtype=np.float32):
    if kind == "attention":
        return init_attention(embed_dim, num_heads, rng, dtype)
    if kind == "hyena":
        return init_hyena(embed_dim, rng=rng, dtype=dtype)
    if kind == "mamba_vision":
        return init_mamba_vision(embed_dim, rng=rng, dtype=dtype)
    raise ValueError(f"unknown mixer kind {kind!r}; expected one of {MIXER_KINDS}")


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------

def _split_heads(x: Tensor, num_heads: int) -> Tensor:
    *lead, n, d = x.shape
    hd = d // num_heads
    x = T.reshape(x, (*lead, n, num_heads, hd))
    nd = x.ndim
    axes = (*range(nd - 3), nd - 2, nd - 3, nd - 1)
    return T.transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, hd = x.shape
    nd = x.ndim
    axes = (*range(nd - 3), nd - 2, nd - 3, nd - 1)
    x = T.transpose(x, axes)
    return T.reshape(x, (*lead, n, h * hd))


def _mask_bias(mask, x: Tensor) -> np.ndarray | None:
    if mask is None:
        return None
    bias = mask.bias if isinstance(mask, ShiftMask) else np.asarray(mask)
    n = x.shape[-2]
    if bias.shape[-1] != n:
        raise ValueError(f"mask covers {bias.shape[-1]} tokens but input has {n}")
    if isinstance(mask, ShiftMask):
        # (num_windows, n, n) -> broadcast over the head axis.
        bias = bias[:, None, :, :]
    return bias


def _attention_scores(x: Tensor, params: AttentionParams) -> Tensor:
    d = x.shape[-1]
    h = params.num_heads
    if d % h:
        raise ValueError(f"embed_dim {d} not divisible by num_heads {h}")
    q = _split_heads(x @ params.w_query, h)
    k = _split_heads(x @ params.w_key, h)
    nd = k.ndim
    scores = q @ T.transpose(k, (*range(nd - 2), nd - 1, nd - 2))
    return scores * (1.0 / math.sqrt(d // h))


def attention_weights(x: Tensor, params: AttentionParams, mask=None) -> Tensor:
    """Post-softmax attention weights, shape (..., heads, n, n)."""
    return T.softmax(_attention_scores(x, params), axis=-1, bias=_mask_bias(mask, x))


def attention_forward(x: Tensor, params: AttentionParams, mask=None) -> Tensor:
    """Multi-head scaled dot-product self-attention.

    ``mask`` may be a ShiftMask (per-window additive bias) or any array
    broadcastable against the (..., heads, n, n) score block; -inf entries
    remove a pair entirely.
    """
    probs = attention_weights(x, params, mask)
    v = _split_heads(x @ params.w_value, params.num_heads)
    return _merge_heads(probs @ v) @ params.w_out


# ---------------------------------------------------------------------------
# Gated long-convolution mixer
# ---------------------------------------------------------------------------

def _positional_features(n: int, num_freqs: int, dtype) -> np.ndarray:
    t = np.arange(n, dtype=np.float64) / n
    columns = [t]
    for k in range(1, num_freqs + 1):
        columns.append(np.sin(2.0 * np.pi * k * t))
        columns.append(np.cos(2.0 * np.pi * k * t))
    return np.stack(columns, axis=1).astype(dtype)


def hyena_decay_envelope(params: HyenaParams, n: int, dtype=None) -> Tensor:
    """Windowing term exp(-softplus(rate) * t), shape (order, n, d)."""
    dtype = dtype or params.decay_raw.dtype
    rates = T.softplus(params.decay_raw)           # (order, d), strictly positive
    rates = T.reshape(rates, (params.order, 1, rates.shape[-1]))
    t = T.constant(np.arange(n, dtype=np.float64).reshape(1, n, 1), dtype=dtype)
    return T.exp(-(rates * t))


def hyena_filters(params: HyenaParams, n: int, dtype=None) -> Tensor:
    """Implicit long filters, shape (order, n, d)."""
    dtype = dtype or params.ffn_w1.dtype
    feats = T.constant(_positional_features(n, params.num_freqs, dtype), dtype=dtype)
    hidden = T.gelu(feats @ params.ffn_w1 + params.ffn_b1)
    response = hidden @ params.ffn_w2 + params.ffn_b2   # (n, order*d)
    d = response.shape[-1] // params.order
    response = T.transpose(T.reshape(response, (n, params.order, d)), (1, 0, 2))
    return response * hyena_decay_envelope(params, n, dtype)


def _conv_tokens(z: Tensor, h: Tensor) -> Tensor:
    # Causal convolution along the token axis of (..., n, d) with (n, d) filters.
    nd = z.ndim
    to_cn = (*range(nd - 2), nd - 1, nd - 2)
    out = fft_linear_conv(T.transpose(z, to_cn), T.transpose(h, (1, 0)))
    return T.transpose(out, to_cn)


def hyena_forward(x: Tensor, params: HyenaParams) -> Tensor:
    """Gated long-convolution mixer, causal in raster token order."""
    *lead, n, d = x.shape
    proj = x @ params.w_in + params.b_in
    bounds_lead = (None,) * (proj.ndim - 1)
    z = T.crop(proj, bounds_lead + ((0, d),))
    filters = hyena_filters(params, n, x.dtype)
    for i in range(params.order):
        gate = T.crop(proj, bounds_lead + (((i + 1) * d, (i + 2) * d),))
        h_i = T.crop(filters, ((i, i + 1), None, None))
        h_i = T.reshape(h_i, (n, d))
        gain = T.reshape(T.crop(params.skip_gain, ((i, i + 1), None)), (d,))
        z = gate * (_conv_tokens(z, h_i) + z * gain)
    return z @ params.w_out


# ---------------------------------------------------------------------------
# Selective state-space scan
# ---------------------------------------------------------------------------

def _scan_shapes(inputs):
    u, delta, a, b_seq, c_seq = (t.data for t in inputs)
    if a.ndim != 2:
        raise ValueError(f"state matrix diagonal must be (channels, states), got {a.shape}")
    if np.any(a >= 0):
        raise ValueError("state matrix diagonal entries must be strictly negative")
    n, c = u.shape[-2], u.shape[-1]
    s = a.shape[1]
    if a.shape[0] != c:
        raise ValueError(f"state matrix has {a.shape[0]} channels, input has {c}")
    if delta.shape != u.shape:
        raise ValueError(f"delta shape {delta.shape} != input shape {u.shape}")
    if b_seq.shape != u.shape[:-1] + (s,) or c_seq.shape != b_seq.shape:
        raise ValueError("input/state projection sequences have inconsistent shapes")
    return u, delta, a, b_seq, c_seq, n, c, s


def _selective_scan_fwd(inputs, attrs):
    u, delta, a, b_seq, c_seq, n, c, s = _scan_shapes(inputs)
    lead = u.shape[:-2]
    batch = int(np.prod(lead)) if lead else 1
    u2 = u.reshape(batch, n, c)
    delta2 = delta.reshape(batch, n, c)
    b2 = b_seq.reshape(batch, n, s)
    c2 = c_seq.reshape(batch, n, s)

    abar = np.exp(delta2[..., None] * a)                     # (B, n, c, s)
    binp = (delta2 * u2)[..., None] * b2[..., None, :]       # (B, n, c, s)
    states = np.empty_like(abar)
    h = np.zeros((batch, c, s), dtype=u.dtype)
    for t in range(n):
        h = abar[:, t] * h + binp[:, t]
        states[:, t] = h
    y = np.einsum("bncs,bns->bnc", states, c2)
    return y.reshape(u.shape), (abar, states)


def _selective_scan_adj(inputs, attrs, saved, out, g):
    u, delta, a, b_seq, c_seq, n, c, s = _scan_shapes(inputs)
    abar, states = saved
    batch = abar.shape[0]
    g2 = g.reshape(batch, n, c)
    delta2 = delta.reshape(batch, n, c)
    u2 = u.reshape(batch, n, c)
    b2 = b_seq.reshape(batch, n, s)
    c2 = c_seq.reshape(batch, n, s)

    dc2 = np.einsum("bnc,bncs->bns", g2, states)
    direct = g2[..., None] * c2[..., None, :]                # (B, n, c, s)
    lams = np.empty_like(direct)
    carry = np.zeros((batch, c, s), dtype=g.dtype)
    for t in range(n - 1, -1, -1):
        lam = direct[:, t] + carry
        lams[:, t] = lam
        carry = lam * abar[:, t]

    prev = np.empty_like(states)
    prev[:, 0] = 0.0
    prev[:, 1:] = states[:, :-1]
    dexparg = lams * prev * abar                             # grad wrt delta*a argument
    ddelta2 = np.einsum("bncs,cs->bnc", dexparg, a)
    da = np.einsum("bncs,bnc->cs", dexparg, delta2)
    dprod = np.einsum("bncs,bns->bnc", lams, b2)             # grad wrt delta*u
    du2 = dprod * delta2
    ddelta2 = ddelta2 + dprod * u2
    db2 = np.einsum("bncs,bnc->bns", lams, delta2 * u2)
    return [
        du2.reshape(u.shape),
        ddelta2.reshape(u.shape),
        da,
        db2.reshape(b_seq.shape),
        dc2.reshape(c_seq.shape),
    ]


register_primitive("selective_scan", _selective_scan_fwd, _selective_scan_adj)


def selective_scan(u: Tensor, delta: Tensor, a: Tensor, b_seq: Tensor, c_seq: Tensor) -> Tensor:
    """Diagonal selective scan over the token axis.

    Discretization and update per token t and channel:
        h_t = exp(delta_t * a) * h_{t-1} + (delta_t * u_t) * b_t
        y_t = <c_t, h_t>
    ``a`` is the per-channel diagonal (channels, states) and must be
    strictly negative; ``b_seq``/``c_seq`` are shared across channels.
    """
    return primitive_forward("selective_scan", (u, delta, a, b_seq, c_seq))


def selective_scan_sequential(u, delta, a, b_seq, c_seq) -> np.ndarray:
    """Reference evaluation of the scan, one token at a time.

    Operates on plain arrays with no tape; this is the oracle any
    accelerated or batched evaluation must match.
    """
    u, delta, a, b_seq, c_seq = (np.asarray(x) for x in (u, delta, a, b_seq, c_seq))
    if np.any(a >= 0):
        raise ValueError("state matrix diagonal entries must be strictly negative")
    n, c = u.shape
    s = a.shape[1]
    y = np.zeros((n, c), dtype=u.dtype)
    h = np.zeros((c, s), dtype=u.dtype)
    for t in range(n):
        abar = np.exp(delta[t][:, None] * a)
        h = abar * h + (delta[t] * u[t])[:, None] * b_seq[t][None, :]
        y[t] = h @ c_seq[t]
    return y


def mamba_vision_forward(x: Tensor, params: MambaVisionParams) -> Tensor:
    """Two-branch selective state-space mixer.

    Branch one: half-width projection, depthwise conv, SiLU, selective
    scan.  Branch two: the same stem without the scan.  Outputs are
    concatenated channelwise and projected back to full width.
    """
    nd = x.ndim
    to_cn = (*range(nd - 2), nd - 1, nd - 2)

    def stem(w, b, conv_w, conv_b):
        f = x @ w + b
        f = T.transpose(f, to_cn)
        f = T.depthwise_conv1d(f, conv_w) + T.reshape(conv_b, (conv_b.shape[0], 1))
        return T.silu(T.transpose(f, to_cn))

    f1 = stem(params.w_in1, params.b_in1, params.conv1_w, params.conv1_b)
    delta = T.softplus(f1 @ params.w_delta + params.b_delta)
    b_seq = f1 @ params.w_bmat
    c_seq = f1 @ params.w_cmat
    a = -T.exp(params.a_log)
    z1 = selective_scan(f1, delta, a, b_seq, c_seq)
    z2 = stem(params.w_in2, params.b_in2, params.conv2_w, params.conv2_b)
    return T.concat([z1, z2], axis=nd - 1) @ params.w_out + params.b_out


def mixer_forward(kind: str, x: Tensor, params, mask=None) -> Tensor:
    """Dispatch on mixer kind; only attention accepts a mask."""
    if kind == "attention":
        return attention_forward(x, params, mask)
    if mask is not None:
        raise ValueError(f"mixer {kind!r} does not take an attention mask")
    if kind == "hyena":
        return hyena_forward(x, params)
    if kind == "mamba_vision":
        return mamba_vision_forward(x, params)
    raise ValueError(f"unknown mixer kind {kind!r}; expected one of {MIXER_KINDS}")


# ---------------------------------------------------------------------------
# Shifted-window masking
# ---------------------------------------------------------------------------

def _region_labels(grid_extents, window_size: int, shift: int) -> np.ndarray:
    labels = np.zeros(grid_extents, dtype=np.int64)
    per_axis = []
    for extent in grid_extents:
        if shift == 0:
            per_axis.append([slice(0, extent)])
        else:
            per_axis.append([
                slice(0, extent - window_size),
                slice(extent - window_size, extent - shift),
                slice(extent - shift, extent),
            ])
    count = 0
    from itertools import product

    for key in product(*per_axis):
        labels[key] = count
        count += 1
    return labels


def _partition_array(arr: np.ndarray, window_size: int) -> np.ndarray:
    # (*grid,) -> (num_windows, window_size**rank)
    rank = arr.ndim
    shape = []
    for extent in arr.shape:
        shape.extend([extent // window_size, window_size])
    arr = arr.reshape(shape)
    order = [2 * i for i in range(rank)] + [2 * i + 1 for i in range(rank)]
    arr = arr.transpose(order)
    return arr.reshape(-1, window_size**rank)


def build_shift_mask(grid_extents, window_size: int, shift: int) -> ShiftMask:
    """Region labels and additive attention bias for cyclic-shifted windows.

    Labels follow the three-band slicing per axis (body, displaced band,
    wrapped band), so a 2D grid produces up to nine regions.  Within each
    window, tokens whose labels differ must not attend to each other; their
    bias entries are -inf, all others zero.
    """
    grid_extents = tuple(int(e) for e in grid_extents)
    if shift < 0 or shift >= window_size:
        raise ValueError(f"shift must satisfy 0 <= shift < window_size, got {shift} vs {window_size}")
    for extent in grid_extents:
        if extent % window_size:
            raise ValueError(f"grid extent {extent} not divisible by window {window_size}")
        if shift and extent < 2 * window_size:
            raise ValueError(
                f"shifted windows need extent >= 2*window_size, got {extent} vs {window_size}"
            )
    labels = _partition_array(_region_labels(grid_extents, window_size, shift), window_size)
    diff = labels[:, :, None] != labels[:, None, :]
    bias = np.where(diff, -np.inf, 0.0)
    return ShiftMask(bias=bias, labels=labels, window_size=window_size, shift=shift)


# ---------------------------------------------------------------------------
# Analytic operation counts
# ---------------------------------------------------------------------------

def flop_count(kind: str, n: int, d: int, params) -> int:
    """FLOPs of one mixer forward pass at sequence length n and width d.

    Counts multiply-accumulate operations (2 FLOPs each) in matrix
    products, convolutions, Fourier transforms, and the scan state update
    exactly as the forward is written; elementwise activations, gatings,
    softmax normalization, and masking are excluded.
    """
    if kind == "attention":
        projections = 4 * n * d * d
        score_blocks = 2 * n * n * d
        return 2 * (projections + score_blocks)
    if kind == "hyena":
        order = params.order
        n_feat, hidden = params.ffn_w1.shape
        m = next_pow2(max(2 * n - 1, 1))
        log_m = max(int(math.log2(m)), 1)
        transforms = 3 * 5 * m * log_m            # classic 5 m log2 m per FFT
        bin_products = 6 * (m // 2 + 1)
        per_channel = transforms + bin_products
        projections = 2 * (n * d * (order + 1) * d + n * d * d)
        filter_ffn = 2 * n * (n_feat * hidden + hidden * order * d)
        skips = 2 * order * n * d
        return projections + filter_ffn + order * d * per_channel + skips
    if kind == "mamba_vision":
        c = d // 2
        s = params.a_log.shape[1]
        k = params.conv1_w.shape[1]
        stems = 2 * (2 * n * d * c + 2 * n * c * k)
        state_proj = 2 * (n * c * c + 2 * n * c * s)
        scan = 6 * n * c * s                      # decay, input, and readout MACs
        out_proj = 2 * n * d * d
        return stems + state_proj + scan + out_proj
    raise ValueError(f"unknown mixer kind {kind!r}; expected one of {MIXER_KINDS}")
