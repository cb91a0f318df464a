"""State-space sequence primitives.

Covers the linear time-invariant pipeline (zero-order-hold discretization,
recurrent scan, structured-kernel convolution form) and the input-dependent
selective scan used inside the channel/spatial scan block. The LTI functions
are plain numpy; the selective scan is differentiable end to end.

Conventions: a diagonal state matrix is passed as a 1-D array of its
diagonal; a full matrix as a 2-D square array. The recurrence is

    h_k = Abar h_{k-1} + Bbar x_k,      y_k = C h_k + D x_k,   h_0 = 0,

and the equivalent length-L convolution kernel is
(C Bbar, C Abar Bbar, ..., C Abar^{L-1} Bbar), applied causally with the
D x skip term added explicitly so both forms agree.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import autodiff as ad
from .autodiff import Tensor


class UnstableDiscretizationWarning(RuntimeWarning):
    """Discretized state matrix has spectral radius above 1."""


@dataclass
class SsmParams:
    """Continuous-time parameters (A, B, C, D) and the step scale delta.

    `a` is either the diagonal (1-D) or a full square matrix (2-D); `b` and
    `c` are length-N vectors; `d` is the scalar skip gain.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float
    delta: float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        n = self.a.shape[0]
        if n < 1:
            raise ValueError("state size must be >= 1")
        if self.a.ndim == 2 and self.a.shape != (n, n):
            raise ValueError(f"state matrix must be square, got {self.a.shape}")
        if self.b.shape != (n,) or self.c.shape != (n,):
            raise ValueError("b and c must be length-N vectors")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    def discretize(self) -> "Discretization":
        return discretize_zoh(self.a, self.b, self.delta)


@dataclass
class Discretization:
    """ZOH result: Abar, Bbar, whether the Taylor limit was used for Bbar,
    and the spectral radius of Abar."""

    a_bar: np.ndarray
    b_bar: np.ndarray
    taylor_fallback: bool
    spectral_radius: float


def discretize_zoh(a, b, delta: float) -> Discretization:
    """Zero-order-hold discretization: Abar = exp(delta A),
    Bbar = (delta A)^-1 (exp(delta A) - I) delta B.

    Diagonal `a` (1-D) uses the closed form expm1(delta a)/a * b, which is
    stable down to a -> 0; a singular/zero state matrix falls back to the
    first-order limit Bbar = delta B, flagged in the result. Emits
    UnstableDiscretizationWarning when the spectral radius exceeds 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not delta > 0:
        raise ValueError("delta must be positive")
    fallback = False
    if a.ndim <= 1:
        a_vec = np.atleast_1d(a)
        b_vec = np.broadcast_to(np.atleast_1d(b), a_vec.shape)
        a_bar = np.exp(delta * a_vec)
        zero = a_vec == 0.0
        safe = np.where(zero, 1.0, a_vec)
        b_bar = np.where(zero, delta * b_vec, np.expm1(delta * a_vec) / safe * b_vec)
        if np.any(zero):
            fallback = True
        rho = float(np.max(np.abs(a_bar)))
        if a.ndim == 0:
            a_bar, b_bar = a_bar[0], b_bar[0]
    elif a.ndim == 2:
        da = delta * a
        a_bar = scipy.linalg.expm(da)
        db = delta * b.reshape(-1)
        try:
            b_bar = np.linalg.solve(da, (a_bar - np.eye(a.shape[0])) @ db)
        except np.linalg.LinAlgError:
            b_bar = db
            fallback = True
        rho = float(np.max(np.abs(np.linalg.eigvals(a_bar))))
    else:
        raise ValueError(f"state matrix must be 0-, 1- or 2-D, got ndim {a.ndim}")
    if rho > 1.0:
        warnings.warn(
            f"discretized state matrix has spectral radius {rho:.6g} > 1; "
            "the recurrence is unstable", UnstableDiscretizationWarning,
            stacklevel=2)
    return Discretization(a_bar=a_bar, b_bar=b_bar, taylor_fallback=fallback,
                          spectral_radius=rho)


def scan_recurrent(a_bar, b_bar, c, d: float, x, chunk_size: int | None = None):
    """Evaluate the discrete recurrence over a length-L input sequence.

    O(L N) for a diagonal `a_bar`. `chunk_size` switches to the two-pass
    chunked execution (per-chunk summaries combined by the associative state
    propagation rule); the result is deterministic for a fixed chunk size.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    a_bar = np.asarray(a_bar, dtype=np.float64)
    b_vec = np.asarray(b_bar, dtype=np.float64).reshape(-1)
    c_vec = np.asarray(c, dtype=np.float64).reshape(-1)
    if chunk_size is not None:
        return _scan_chunked(a_bar, b_vec, c_vec, d, x, chunk_size)
    diag = a_bar.ndim <= 1
    a_vec = np.atleast_1d(a_bar) if diag else a_bar
    h = np.zeros_like(b_vec)
    y = np.empty_like(x)
    for k in range(x.size):
        if diag:
            h = a_vec * h + b_vec * x[k]
        else:
            h = a_vec @ h + b_vec * x[k]
        y[k] = c_vec @ h + d * x[k]
    return y


def _scan_chunked(a_bar, b_vec, c_vec, d: float, x, chunk_size: int):
    """Chunked scan: summarize each chunk as (state multiplier, local state),
    prefix-combine the summaries, then expand chunk outputs from the entry
    states. Exactly the recurrence algebra, reorganized."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    diag = a_bar.ndim <= 1
    a_vec = np.atleast_1d(a_bar) if diag else a_bar
    n = b_vec.size
    chunks = [x[i:i + chunk_size] for i in range(0, x.size, chunk_size)]

    mults = []   # state multiplier over the chunk: Abar^len
    locals_ = []  # chunk-final state when entering with h = 0
    for xs in chunks:
        m = np.ones(n) if diag else np.eye(n)
        h = np.zeros(n)
        for xk in xs:
            if diag:
                h = a_vec * h + b_vec * xk
                m = a_vec * m
            else:
                h = a_vec @ h + b_vec * xk
                m = a_vec @ m
        mults.append(m)
        locals_.append(h)

    # prefix pass: entry state of each chunk
    entries = [np.zeros(n)]
    for m, loc in zip(mults[:-1], locals_[:-1]):
        prev = entries[-1]
        entries.append((m * prev if diag else m @ prev) + loc)

    y = np.empty_like(x)
    pos = 0
    for xs, h0 in zip(chunks, entries):
        h = h0
        for xk in xs:
            if diag:
                h = a_vec * h + b_vec * xk
            else:
                h = a_vec @ h + b_vec * xk
            y[pos] = c_vec @ h + d * xk
            pos += 1
    return y


def kernel_conv_form(a_bar, b_bar, c, length: int) -> np.ndarray:
    """Structured convolution kernel (C Bbar, C Abar Bbar, ..., C Abar^{L-1} Bbar)."""
    if length < 1:
        raise ValueError("kernel length must be >= 1")
    a_bar = np.asarray(a_bar, dtype=np.float64)
    v = np.asarray(b_bar, dtype=np.float64).reshape(-1).copy()
    c_vec = np.asarray(c, dtype=np.float64).reshape(-1)
    diag = a_bar.ndim <= 1
    a_vec = np.atleast_1d(a_bar) if diag else a_bar
    kernel = np.empty(length)
    for k in range(length):
        kernel[k] = c_vec @ v
        v = a_vec * v if diag else a_vec @ v
    return kernel


def apply_kernel(kernel: np.ndarray, d: float, x) -> np.ndarray:
    """Causal convolution with the structured kernel plus the D x skip term."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return np.convolve(x, kernel)[: x.size] + d * x


# --------------------------------------------------------------------------
# selective (input-dependent) scan
# --------------------------------------------------------------------------

@dataclass
class SelectiveSSM:
    """Learned parameters generating per-step (B_t, C_t, delta_t).

    The state matrix is diagonal per channel, A = -softplus(a_raw), so it is
    always negative real. Projections act on the input sequence: delta_t =
    softplus(x_t W_delta + b_delta) > 0 by construction, B_t = x_t W_b + b_b,
    C_t = x_t W_c + b_c. `d_skip` is the per-channel passthrough gain.
    """

    a_raw: Tensor      # (d_model, N)
    w_delta: Tensor    # (d_model, d_model)
    b_delta: Tensor    # (d_model,)
    w_b: Tensor        # (d_model, N)
    b_b: Tensor        # (N,)
    w_c: Tensor        # (d_model, N)
    b_c: Tensor        # (N,)
    d_skip: Tensor     # (d_model,)

    @property
    def d_model(self) -> int:
        return self.a_raw.shape[0]

    @property
    def state_size(self) -> int:
        return self.a_raw.shape[1]

    @classmethod
    def init(cls, d_model: int, state_size: int, rng: np.random.Generator) -> "SelectiveSSM":
        def uniform(shape, scale):
            return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)

        fan = 1.0 / np.sqrt(d_model)
        return cls(
            a_raw=Tensor(rng.uniform(0.0, 1.0, size=(d_model, state_size)), requires_grad=True),
            w_delta=uniform((d_model, d_model), fan),
            b_delta=Tensor(np.zeros(d_model), requires_grad=True),
            w_b=uniform((d_model, state_size), fan),
            b_b=Tensor(np.zeros(state_size), requires_grad=True),
            w_c=uniform((d_model, state_size), fan),
            b_c=Tensor(np.zeros(state_size), requires_grad=True),
            d_skip=Tensor(np.ones(d_model), requires_grad=True),
        )

    def named_params(self):
        yield "a_raw", self.a_raw
        yield "w_delta", self.w_delta
        yield "b_delta", self.b_delta
        yield "w_b", self.w_b
        yield "b_b", self.b_b
        yield "w_c", self.w_c
        yield "b_c", self.b_c
        yield "d_skip", self.d_skip


def selective_scan(x: Tensor, params: SelectiveSSM) -> Tensor:
    """Input-dependent scan over a (L, d_model) sequence.

    Per-channel recurrence with Abar_t = exp(delta_t A) and the simplified
    Bbar_t = delta_t B_t discretization; differentiable in the input and in
    every parameter.
    """
    if x.ndim != 2 or x.shape[1] != params.d_model:
        raise ValueError(
            f"expected (L, {params.d_model}) input sequence, got {x.shape}")
    delta = ad.softplus(ad.add(ad.matmul(x, params.w_delta), params.b_delta))
    b_seq = ad.add(ad.matmul(x, params.w_b), params.b_b)
    c_seq = ad.add(ad.matmul(x, params.w_c), params.b_c)
    a = ad.mul(ad.softplus(params.a_raw), -1.0)
    core = _selective_core(x, delta, a, b_seq, c_seq)
    return ad.add(core, ad.mul(x, params.d_skip))


def _selective_core(x: Tensor, delta: Tensor, a: Tensor, b_seq: Tensor,
                    c_seq: Tensor) -> Tensor:
    """Time-varying diagonal scan as a single op with a hand-derived adjoint.

    Shapes: x, delta (L,d); a (d,N); b_seq, c_seq (L,N). The adjoint
    recursion mirrors the forward one and needs the stored state history.
    """
    xd, dd, adata = x.data, delta.data, a.data
    bd, cd = b_seq.data, c_seq.data
    length, d_model = xd.shape
    n = adata.shape[1]

    a_bars = np.exp(dd[:, :, None] * adata[None, :, :])          # (L,d,N)
    bx = np.einsum("ld,ln->ldn", dd * xd, bd)                    # (L,d,N)
    h = np.zeros((length + 1, d_model, n))
    for t in range(length):
        h[t + 1] = a_bars[t] * h[t] + bx[t]
    y = np.einsum("ldn,ln->ld", h[1:], cd)

    out = Tensor._wrap(y, (x, delta, a, b_seq, c_seq))
    if out.requires_grad:
        def _bw():
            gy = out.grad
            g_x = np.zeros_like(xd)
            g_delta = np.zeros_like(dd)
            g_a = np.zeros_like(adata)
            g_b = np.zeros_like(bd)
            g_c = np.einsum("ld,ldn->ln", gy, h[1:])
            lam = np.zeros((d_model, n))
            for t in range(length - 1, -1, -1):
                lam = lam + gy[t][:, None] * cd[t][None, :]
                ga_bar = lam * h[t]
                g_a += ga_bar * a_bars[t] * dd[t][:, None]
                g_delta[t] += np.einsum("dn,dn->d", ga_bar * a_bars[t], adata)
                s = (lam * bd[t][None, :]).sum(axis=1)
                g_delta[t] += s * xd[t]
                g_x[t] += s * dd[t]
                g_b[t] += (lam * (dd[t] * xd[t])[:, None]).sum(axis=0)
                lam = lam * a_bars[t]
            if x.requires_grad:
                x.grad += g_x
            if delta.requires_grad:
                delta.grad += g_delta
            if a.requires_grad:
                a.grad += g_a
            if b_seq.requires_grad:
                b_seq.grad += g_b
            if c_seq.requires_grad:
                c_seq.grad += g_c
        out._backward_fn = _bw
    return out
