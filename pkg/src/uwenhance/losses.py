"""Training losses: pixel, structural, edge, quality, and reconstruction terms.

All losses operate on (3,H,W) tensors with unit-interval values and are
differentiable through the autodiff module. The quality term backpropagates
through a smooth surrogate of the no-reference quality score (soft absolute
values, epsilon-padded block ratios); the metrics module keeps the exact
nonsmooth version for evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatchError

# SSIM constants from Wang et al. 2004 (https://ieeexplore.ieee.org/document/1284395),
# with dynamic range L = 1 for unit-interval images.
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

EDGE_EPS = 1e-3
UIQM_FLOOR = 0.1

# surrogate smoothing constants (0-255 working scale)
_SOFT_ABS_EPS = 1e-6
_BLOCK_RATIO_EPS = 1.0
_UICM_SQRT_EPS = 1e-12

_LAPLACIAN = np.array([[0.0, 1.0, 0.0],
                       [1.0, -4.0, 1.0],
                       [0.0, 1.0, 0.0]])
_SOBEL_X = np.array([[1.0, 0.0, -1.0],
                     [2.0, 0.0, -2.0],
                     [1.0, 0.0, -1.0]])


@dataclass
class LossWeights:
    """Loss composition switches; `lambda_edge` weights the edge term."""

    lambda_edge: float = 0.05
    enable_reconstruction: bool = True
    enable_uiqm: bool = True

    def __post_init__(self):
        if self.lambda_edge < 0:
            raise ValueError("lambda_edge must be >= 0")


@dataclass
class LossBreakdown:
    """Per-term values of one loss evaluation; disabled terms are 0.

    `tensor` carries the scalar graph node for backprop and is not part of
    the serialized record.
    """

    l2: float
    l_ssim: float
    l_edge: float
    l_uiqm: float
    l2_r: float
    l_ssim_r: float
    total: float
    tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def as_record(self) -> dict:
        return {"l2": self.l2, "l_ssim": self.l_ssim, "l_edge": self.l_edge,
                "l_uiqm": self.l_uiqm, "l2_R": self.l2_r, "l_ssim_R": self.l_ssim_r,
                "total": self.total}


def _require_same_shape(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"loss operands differ in shape: {a.shape} vs {b.shape}")


def l2_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference (mean rather than sum keeps the scale
    resolution independent)."""
    _require_same_shape(a, b)
    d = ad.sub(a, b)
    return ad.reduce_mean(ad.mul(d, d))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian window."""
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_index(a: Tensor, b: Tensor, window_size: int = SSIM_WINDOW,
               sigma: float = SSIM_SIGMA, data_range: float = 1.0) -> Tensor:
    """Mean local structural similarity over valid Gaussian windows.

    Computed per channel and averaged; windows never cross the image border
    (valid mode). Raises when the image is smaller than the window.
    """
    _require_same_shape(a, b)
    if a.ndim != 3:
        raise ShapeMismatchError(f"ssim_index expects (C,H,W) tensors, got {a.shape}")
    c, h, w = a.shape
    if h < window_size or w < window_size:
        raise ShapeMismatchError(
            f"image {h}x{w} smaller than the {window_size}x{window_size} SSIM window")
    win = Tensor(gaussian_window(window_size, sigma).reshape(1, 1, window_size, window_size))
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    per_channel = []
    for ch in range(c):
        x = a[ch:ch + 1]
        y = b[ch:ch + 1]
        mu_x = ad.conv2d(x, win)
        mu_y = ad.conv2d(y, win)
        mu_xx = ad.mul(mu_x, mu_x)
        mu_yy = ad.mul(mu_y, mu_y)
        mu_xy = ad.mul(mu_x, mu_y)
        var_x = ad.sub(ad.conv2d(ad.mul(x, x), win), mu_xx)
        var_y = ad.sub(ad.conv2d(ad.mul(y, y), win), mu_yy)
        cov = ad.sub(ad.conv2d(ad.mul(x, y), win), mu_xy)
        num = ad.mul(ad.add(ad.mul(mu_xy, 2.0), c1), ad.add(ad.mul(cov, 2.0), c2))
        den = ad.mul(ad.add(ad.add(mu_xx, mu_yy), c1), ad.add(ad.add(var_x, var_y), c2))
        per_channel.append(ad.reduce_mean(ad.div(num, den)))
    total = per_channel[0]
    for t in per_channel[1:]:
        total = ad.add(total, t)
    return ad.mul(total, 1.0 / c)


def ssim_loss(a: Tensor, b: Tensor) -> Tensor:
    """1 - SSIM(a, b)."""
    return ad.sub(1.0, ssim_index(a, b))


def _depthwise_fixed(x: Tensor, kernel2d: np.ndarray, padding: int) -> Tensor:
    """Apply one fixed 2-D kernel to every channel of a (C,H,W) tensor."""
    k = kernel2d.shape[0]
    win = Tensor(kernel2d.reshape(1, 1, k, k))
    parts = [ad.conv2d(x[c:c + 1], win, padding=padding) for c in range(x.shape[0])]
    return ad.concat(parts, axis=0)


def edge_loss(a: Tensor, b: Tensor, eps: float = EDGE_EPS) -> Tensor:
    """Charbonnier-aggregated Laplacian difference:
    sqrt(mean((Lap a - Lap b)^2) + eps^2)."""
    _require_same_shape(a, b)
    la = _depthwise_fixed(a, _LAPLACIAN, padding=1)
    lb = _depthwise_fixed(b, _LAPLACIAN, padding=1)
    d = ad.sub(la, lb)
    return ad.sqrt(ad.add(ad.reduce_mean(ad.mul(d, d)), eps * eps))


# --------------------------------------------------------------------------
# differentiable quality surrogate
# --------------------------------------------------------------------------

def _trimmed_mean(v: Tensor, alpha: float = 0.1) -> Tensor:
    """Asymmetric alpha-trimmed mean of a 1-D tensor.

    The sort permutation is data dependent but treated as constant for the
    gradient (piecewise constant almost everywhere).
    """
    k = v.size
    t_lo = math.ceil(alpha * k)
    t_hi = math.floor(alpha * k)
    order = np.argsort(v.data, kind="stable")
    kept = v[order[t_lo:k - t_hi]]
    return ad.reduce_mean(kept)


def _soft_colorfulness(x255: Tensor) -> Tensor:
    r = ad.reshape(x255[0], (-1,))
    g = ad.reshape(x255[1], (-1,))
    b = ad.reshape(x255[2], (-1,))
    rg = ad.sub(r, g)
    yb = ad.sub(ad.mul(ad.add(r, g), 0.5), b)
    mu_rg = _trimmed_mean(rg)
    mu_yb = _trimmed_mean(yb)
    d_rg = ad.sub(rg, mu_rg)
    d_yb = ad.sub(yb, mu_yb)
    s_rg = ad.reduce_mean(ad.mul(d_rg, d_rg))
    s_yb = ad.reduce_mean(ad.mul(d_yb, d_yb))
    mu_norm = ad.sqrt(ad.add(ad.add(ad.mul(mu_rg, mu_rg), ad.mul(mu_yb, mu_yb)), _UICM_SQRT_EPS))
    s_norm = ad.sqrt(ad.add(ad.add(s_rg, s_yb), _UICM_SQRT_EPS))
    from .metrics import UICM_MU_COEF, UICM_SIGMA_COEF
    return ad.add(ad.mul(mu_norm, UICM_MU_COEF), ad.mul(s_norm, UICM_SIGMA_COEF))


def _block_stats(x: Tensor, block: int) -> tuple[Tensor, Tensor, int]:
    """Per-block (max, min) of a 2-D tensor cropped to whole blocks."""
    h, w = x.shape
    k2, k1 = h // block, w // block
    cropped = x[:k2 * block, :k1 * block]
    blocks = ad.reshape(
        ad.transpose(ad.reshape(cropped, (k2, block, k1, block)), (0, 2, 1, 3)),
        (k2 * k1, block * block))
    return (ad.reduce_max(blocks, axis=1), ad.reduce_min(blocks, axis=1), k2 * k1)


def _soft_sharpness(x255: Tensor, block: int) -> Tensor:
    from .metrics import UISM_LUMA_WEIGHTS
    total = None
    sobel_y = _SOBEL_X.T
    for ch, weight in zip(range(3), UISM_LUMA_WEIGHTS):
        plane = x255[ch:ch + 1]
        gx = ad.conv2d(plane, Tensor(_SOBEL_X.reshape(1, 1, 3, 3)), padding=1)
        gy = ad.conv2d(plane, Tensor(sobel_y.reshape(1, 1, 3, 3)), padding=1)
        mag = ad.sqrt(ad.add(ad.add(ad.mul(gx, gx), ad.mul(gy, gy)), _SOFT_ABS_EPS))
        edge_map = ad.mul(mag, plane)[0]
        mx, mn, nblocks = _block_stats(edge_map, block)
        ratio = ad.div(ad.add(mx, _BLOCK_RATIO_EPS), ad.add(mn, _BLOCK_RATIO_EPS))
        eme = ad.mul(ad.reduce_sum(ad.log(ratio)), 2.0 / nblocks)
        term = ad.mul(eme, weight)
        total = term if total is None else ad.add(total, term)
    return total


def _soft_contrast(x255: Tensor, block: int) -> Tensor:
    c, h, w = x255.shape
    k2, k1 = h // block, w // block
    cropped = x255[:, :k2 * block, :k1 * block]
    blocks = ad.reshape(
        ad.transpose(ad.reshape(cropped, (c, k2, block, k1, block)), (1, 3, 0, 2, 4)),
        (k2 * k1, c * block * block))
    mx = ad.reduce_max(blocks, axis=1)
    mn = ad.reduce_min(blocks, axis=1)
    t = ad.sub(mx, mn)
    s = ad.add(mx, mn)
    u = ad.div(ad.add(t, _BLOCK_RATIO_EPS), ad.add(s, _BLOCK_RATIO_EPS))
    return ad.mul(ad.reduce_sum(ad.mul(u, ad.log(u))), -1.0 / (k2 * k1))


def uiqm_surrogate(j: Tensor, block: int | None = None) -> Tensor:
    """Differentiable stand-in for the no-reference quality score.

    Same component structure and weights as the exact metric, with soft
    absolute values and epsilon-padded block ratios so gradients exist
    everywhere except argmax/sort boundaries.
    """
    from .metrics import UIQM_BLOCK_SIZE, UIQM_WEIGHTS
    if block is None:
        block = UIQM_BLOCK_SIZE
    x255 = ad.mul(j, 255.0)
    c_col, c_sharp, c_con = UIQM_WEIGHTS
    return ad.add(
        ad.add(ad.mul(_soft_colorfulness(x255), c_col),
               ad.mul(_soft_sharpness(x255, block), c_sharp)),
        ad.mul(_soft_contrast(x255, block), c_con))


def floored_reciprocal(u: Tensor, floor: float = UIQM_FLOOR) -> Tensor:
    """1 / max(u, floor); below the floor the value is constant (zero grad)."""
    clamped = ad.add(floor, ad.relu(ad.sub(u, floor)))
    return ad.div(1.0, clamped)


def uiqm_loss(j: Tensor) -> Tensor:
    """Reciprocal quality loss: small when the quality surrogate is high."""
    return floored_reciprocal(uiqm_surrogate(j), UIQM_FLOOR)


# --------------------------------------------------------------------------
# total loss
# --------------------------------------------------------------------------

def total_loss(j: Tensor, j_label: Tensor, i: Tensor, i_recon: Tensor,
               weights: LossWeights | None = None) -> LossBreakdown:
    """Weighted sum of the direct terms and the reconstruction terms.

    total = l2 + l_ssim + lambda*l_edge + l_uiqm + l2_R + l_ssim_R, with
    disabled terms contributing exactly 0.
    """
    if weights is None:
        weights = LossWeights()
    t_l2 = l2_loss(j, j_label)
    t_ssim = ssim_loss(j, j_label)
    t_edge = edge_loss(j, j_label)
    total = ad.add(ad.add(t_l2, t_ssim), ad.mul(t_edge, weights.lambda_edge))

    if weights.enable_uiqm:
        t_uiqm = uiqm_loss(j)
        total = ad.add(total, t_uiqm)
        uiqm_val = float(t_uiqm.data)
    else:
        uiqm_val = 0.0

    if weights.enable_reconstruction:
        t_l2r = l2_loss(i, i_recon)
        t_ssimr = ssim_loss(i, i_recon)
        total = ad.add(ad.add(total, t_l2r), t_ssimr)
        l2r_val, ssimr_val = float(t_l2r.data), float(t_ssimr.data)
    else:
        l2r_val, ssimr_val = 0.0, 0.0

    return LossBreakdown(
        l2=float(t_l2.data),
        l_ssim=float(t_ssim.data),
        l_edge=float(t_edge.data),
        l_uiqm=uiqm_val,
        l2_r=l2r_val,
        l_ssim_r=ssimr_val,
        total=float(total.data),
        tensor=total,
    )
