"""Quick oracle suite behind the ``selftest`` command.

Each check recomputes an operator or metric through an independent route
(direct convolution, a per-token python loop, central differences, a
hand-evaluated example) and compares against the library implementation.
The whole suite runs in a few seconds at double precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backbones, fourier, mixers, tasks, trainer
from . import tensor as T
from .params import named_parameters

__all__ = ["CheckResult", "run_all", "CHECKS"]


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


class CheckFailure(AssertionError):
    pass


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise CheckFailure(message)


# ---------------------------------------------------------------------------
# Fourier layer
# ---------------------------------------------------------------------------

def check_fft_matches_numpy() -> str:
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 64))
    with T.Tape():
        spec = fourier.rfft(T.constant(x, dtype=np.float64)).data
    ours = spec[..., 0] + 1j * spec[..., 1]
    ref = np.fft.rfft(x, 64)
    err = float(np.abs(ours - ref).max())
    _require(err < 1e-10, f"rfft deviates from numpy.fft by {err:.3e}")
    return f"max deviation {err:.3e}"


def check_fft_roundtrip() -> str:
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 128))
    with T.Tape():
        back = fourier.irfft(fourier.rfft(T.constant(x, dtype=np.float64)), 128).data
    err = float(np.abs(back - x).max())
    _require(err < 1e-10, f"irfft(rfft(x)) off by {err:.3e}")
    return f"roundtrip error {err:.3e}"


def check_fft_conv_vs_direct() -> str:
    rng = np.random.default_rng(2)
    worst = 0.0
    for n in (5, 17, 33):
        x = rng.normal(size=(2, n))
        h = rng.normal(size=(2, n))
        with T.Tape():
            out = fourier.fft_linear_conv(
                T.constant(x, dtype=np.float64), T.constant(h, dtype=np.float64)
            ).data
        ref = np.stack([np.convolve(x[c], h[c])[:n] for c in range(2)])
        worst = max(worst, float(np.abs(out - ref).max()))
    _require(worst < 1e-10, f"fft conv deviates from direct conv by {worst:.3e}")
    return f"max deviation {worst:.3e}"


# ---------------------------------------------------------------------------
# Mixer forward oracles
# ---------------------------------------------------------------------------

def check_attention_vs_loop() -> str:
    rng = np.random.default_rng(3)
    d, n, heads = 8, 6, 2
    params = mixers.init_attention(d, num_heads=heads, rng=rng, dtype=np.float64)
    x = rng.normal(size=(n, d))
    with T.Tape():
        out = mixers.attention_forward(T.constant(x, dtype=np.float64), params).data

    hd = d // heads
    q, k, v = (x @ params.w_query.data, x @ params.w_key.data, x @ params.w_value.data)
    merged = np.zeros((n, d))
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        for i in range(n):
            scores = np.array([q[i, sl] @ k[j, sl] for j in range(n)]) / np.sqrt(hd)
            w = np.exp(scores - scores.max())
            w /= w.sum()
            merged[i, sl] = sum(w[j] * v[j, sl] for j in range(n))
    ref = merged @ params.w_out.data
    err = float(np.abs(out - ref).max())
    _require(err < 1e-10, f"attention deviates from per-token loop by {err:.3e}")
    return f"max deviation {err:.3e}"


def check_scan_vs_sequential() -> str:
    rng = np.random.default_rng(4)
    n, c, s = 12, 4, 3
    u = rng.normal(size=(n, c))
    delta = np.abs(rng.normal(size=(n, c))) * 0.5 + 0.05
    a = -np.abs(rng.normal(size=(c, s))) - 0.1
    b_seq = rng.normal(size=(n, s))
    c_seq = rng.normal(size=(n, s))
    with T.Tape():
        out = mixers.selective_scan(
            *(T.constant(z, dtype=np.float64) for z in (u, delta, a, b_seq, c_seq))
        ).data
    ref = mixers.selective_scan_sequential(u, delta, a, b_seq, c_seq)
    err = float(np.abs(out - ref).max())
    _require(err < 1e-10, f"fused scan deviates from sequential oracle by {err:.3e}")
    return f"max deviation {err:.3e}"


def check_swin_single_window_degeneracy() -> str:
    # A window covering the whole grid reduces windowed attention to
    # global attention over the same tokens.
    rng = np.random.default_rng(5)
    d, w = 8, 4
    grid = (w, w)
    params = mixers.init_attention(d, num_heads=2, rng=rng, dtype=np.float64)
    x = rng.normal(size=(w * w, d))
    with T.Tape():
        xt = T.constant(x, dtype=np.float64)
        global_out = mixers.attention_forward(xt, params).data
        g = T.reshape(xt, (*grid, d))
        windows, padded = backbones.window_partition(g, w)
        mixed = mixers.attention_forward(windows, params)
        back = backbones.window_reverse(mixed, w, padded)
        windowed_out = T.reshape(back, (w * w, d)).data
    err = float(np.abs(global_out - windowed_out).max())
    _require(err < 1e-6, f"single-window swin deviates from global attention by {err:.3e}")
    return f"max deviation {err:.3e}"


# ---------------------------------------------------------------------------
# Gradients by central differences
# ---------------------------------------------------------------------------

def _fd_check(kind: str) -> str:
    rng = np.random.default_rng(6)
    n, d = 8, 8
    params = mixers.init_mixer(kind, d, num_heads=2, rng=rng, dtype=np.float64)
    x = rng.normal(size=(n, d))
    weights = rng.normal(size=(n, d))

    def loss_value() -> float:
        with T.Tape():
            out = mixers.mixer_forward(kind, T.constant(x, dtype=np.float64), params)
            return float(T.reduce_sum(out * T.constant(weights, dtype=np.float64)).data)

    with T.Tape() as tape:
        out = mixers.mixer_forward(kind, T.constant(x, dtype=np.float64), params)
        loss = T.reduce_sum(out * T.constant(weights, dtype=np.float64))
        T.backward(tape, loss)

    eps = 1e-6
    worst = 0.0
    probe_rng = np.random.default_rng(7)
    for name, p in named_parameters(params):
        if p.grad is None:
            raise CheckFailure(f"{kind}: no gradient for {name}")
        flat = p.data.reshape(-1)
        picks = probe_rng.choice(flat.size, size=min(3, flat.size), replace=False)
        for idx in picks:
            keep = flat[idx]
            flat[idx] = keep + eps
            up = loss_value()
            flat[idx] = keep - eps
            down = loss_value()
            flat[idx] = keep
            fd = (up - down) / (2 * eps)
            an = float(p.grad.data.reshape(-1)[idx])
            if abs(fd - an) < 1e-8:
                continue    # below central-difference resolution
            rel = abs(fd - an) / max(abs(fd), abs(an))
            worst = max(worst, rel)
            _require(rel < 1e-4, f"{kind}: grad mismatch at {name}[{idx}]: fd={fd:.6g} an={an:.6g}")
    return f"max relative error {worst:.3e}"


def check_attention_gradients() -> str:
    return _fd_check("attention")


def check_hyena_gradients() -> str:
    return _fd_check("hyena")


def check_mamba_gradients() -> str:
    return _fd_check("mamba_vision")


# ---------------------------------------------------------------------------
# Shifted-window mask
# ---------------------------------------------------------------------------

def check_shift_mask() -> str:
    mask = mixers.build_shift_mask((8, 8), 4, 2)
    regions = len(np.unique(mask.labels))
    _require(regions == 9, f"expected 9 shift regions on an 8x8 grid, got {regions}")

    rng = np.random.default_rng(8)
    d = 8
    params = mixers.init_attention(d, num_heads=2, rng=rng, dtype=np.float64)
    x = rng.normal(size=(mask.bias.shape[0], 16, d))
    with T.Tape():
        probs = mixers.attention_weights(T.constant(x, dtype=np.float64), params, mask=mask).data
    blocked = np.broadcast_to(np.isinf(mask.bias[:, None, :, :]), probs.shape)
    leak = float(np.abs(probs[blocked]).max()) if blocked.any() else 0.0
    _require(leak == 0.0, f"masked attention weight leaked {leak:.3e}")
    rows = float(np.abs(probs.sum(axis=-1) - 1.0).max())
    _require(rows < 1e-12, f"masked rows do not renormalize, off by {rows:.3e}")
    return f"9 regions, masked weights exactly zero, rows sum to 1 (+-{rows:.1e})"


# ---------------------------------------------------------------------------
# Metrics and schedule examples
# ---------------------------------------------------------------------------

def check_metric_examples() -> str:
    d = tasks.dice(np.array([1, 1, 0, 0]), np.array([1, 0, 1, 0]))
    _require(d == 0.5, f"dice example expected 0.5, got {d}")
    a = tasks.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    _require(abs(a - 0.75) < 1e-12, f"auroc example expected 0.75, got {a}")
    x = np.random.default_rng(9).normal(size=(16, 16))
    s = tasks.ssim(x, x)
    _require(abs(s - 1.0) < 1e-12, f"ssim(x, x) expected 1.0, got {s}")
    lo, hi = tasks.bootstrap_ci(np.full(20, 0.3))
    _require(abs(hi - lo) < 1e-12 and abs(lo - 0.3) < 1e-12,
             f"constant values should give a degenerate interval at 0.3, got [{lo}, {hi}]")
    return "dice 0.5, auroc 0.75, ssim 1.0, degenerate bootstrap"


def check_denoise_loss_floor() -> str:
    x = np.random.default_rng(10).normal(size=(1, 16, 16))
    with T.Tape():
        p = T.parameter(x.copy())
        val = float(tasks.denoise_loss(p, x).data)
    err = abs(val - tasks.CHARBONNIER_EPS)
    _require(err < 1e-9, f"identity denoise loss should equal the Charbonnier floor, off by {err:.3e}")
    return f"identity loss {val:.6e}"


def check_schedule_endpoints() -> str:
    total, lr = 80, 0.3
    start = trainer.one_cycle_lr(0, total, lr)
    peak = trainer.one_cycle_lr(round(0.25 * total), total, lr)
    end = trainer.one_cycle_lr(total, total, lr)
    _require(abs(start - lr / 25) < 1e-15, f"schedule start {start} != lr_max/25")
    _require(abs(peak - lr) < 1e-15, f"schedule peak {peak} != lr_max")
    _require(abs(end - lr / 1e4) < 1e-15, f"schedule end {end} != lr_max/1e4")
    return "lr_max/25 -> lr_max -> lr_max/1e4"


CHECKS = [
    ("fft_matches_numpy", check_fft_matches_numpy),
    ("fft_roundtrip", check_fft_roundtrip),
    ("fft_conv_vs_direct", check_fft_conv_vs_direct),
    ("attention_vs_loop", check_attention_vs_loop),
    ("scan_vs_sequential", check_scan_vs_sequential),
    ("swin_single_window_degeneracy", check_swin_single_window_degeneracy),
    ("attention_gradients", check_attention_gradients),
    ("hyena_gradients", check_hyena_gradients),
    ("mamba_gradients", check_mamba_gradients),
    ("shift_mask", check_shift_mask),
    ("metric_examples", check_metric_examples),
    ("denoise_loss_floor", check_denoise_loss_floor),
    ("schedule_endpoints", check_schedule_endpoints),
]


def run_all() -> list:
    """Run every check; failures are captured, not raised."""
    results = []
    for name, fn in CHECKS:
        try:
            detail = fn()
            results.append(CheckResult(name, True, detail))
        except Exception as exc:  # noqa: BLE001 - report, do not abort the suite
            results.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))
    return results
