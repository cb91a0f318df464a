"""Evaluation metrics: MSE/PSNR, SSIM, and the no-reference quality scores.

Reference metrics follow the 0-255 reporting convention (MSE is computed on
intensities scaled to 0-255). The no-reference scores use the published
component formulas and weights:

  - UIQM (Panetta et al. 2016, https://ieeexplore.ieee.org/document/7305804):
    colorfulness from asymmetric alpha-trimmed opponent-channel statistics,
    sharpness from Sobel-weighted EME over blocks, contrast from logAMEE
    over blocks.
  - UCIQE (Yang & Sowmya 2015, https://ieeexplore.ieee.org/document/7300447):
    chroma spread, luminance contrast, and mean saturation in CIELab.

Implementation notes: UIQM works on the 0-255 scale with 8x8 blocks and
wrap-around Sobel boundaries, which makes the score exactly invariant to
circular shifts by multiples of the block size. The global edge-map
rescaling seen in some published implementations cancels inside EME's
max/min ratios and is therefore omitted. UCIQE normalizes lightness and
chroma by 100 so a full-range black/white image has unit luminance
contrast.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ManifestError, ShapeMismatchError
from .losses import ssim_index

PSNR_CAP_DB = 99.0

# UIQM component coefficients (Panetta et al. 2016)
UIQM_WEIGHTS = (0.0282, 0.2953, 3.5753)          # colorfulness, sharpness, contrast
UICM_MU_COEF = -0.0268
UICM_SIGMA_COEF = 0.1586
UISM_LUMA_WEIGHTS = (0.299, 0.587, 0.144)
UIQM_BLOCK_SIZE = 8
UIQM_TRIM_ALPHA = 0.1
UIQM_MIN_SIZE = 16

# UCIQE coefficients (Yang & Sowmya 2015)
UCIQE_WEIGHTS = (0.4680, 0.2745, 0.2576)         # chroma std, luminance contrast, mean saturation
UCIQE_QUANTILE = 0.01


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeMismatchError(f"expected an (H,W,3) image, got shape {img.shape}")
    return img


def mse_psnr(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Mean squared error on the 0-255 scale and the matching PSNR in dB.

    PSNR = 10 log10(255^2 / MSE); a zero-MSE pair reports the 99 dB cap.
    """
    a, b = _check_image(a), _check_image(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean(((a - b) * 255.0) ** 2))
    if mse == 0.0:
        return 0.0, PSNR_CAP_DB
    return mse, 10.0 * math.log10(255.0 ** 2 / mse)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity (shared implementation with the SSIM loss)."""
    a, b = _check_image(a), _check_image(b)
    ta = Tensor(np.moveaxis(a, 2, 0))
    tb = Tensor(np.moveaxis(b, 2, 0))
    return float(ssim_index(ta, tb).data)


# --------------------------------------------------------------------------
# UIQM
# --------------------------------------------------------------------------

def _alpha_trimmed_mean(values: np.ndarray, alpha: float = UIQM_TRIM_ALPHA) -> float:
    k = values.size
    t_lo = math.ceil(alpha * k)
    t_hi = math.floor(alpha * k)
    kept = np.sort(values)[t_lo:k - t_hi]
    return float(np.mean(kept))


def _uicm(x255: np.ndarray) -> float:
    r = x255[:, :, 0].ravel()
    g = x255[:, :, 1].ravel()
    b = x255[:, :, 2].ravel()
    rg = r - g
    yb = 0.5 * (r + g) - b
    mu_rg = _alpha_trimmed_mean(rg)
    mu_yb = _alpha_trimmed_mean(yb)
    s_rg = float(np.mean((rg - mu_rg) ** 2))
    s_yb = float(np.mean((yb - mu_yb) ** 2))
    return UICM_MU_COEF * math.hypot(mu_rg, mu_yb) + UICM_SIGMA_COEF * math.sqrt(s_rg + s_yb)


def _sobel_mag_wrap(channel: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude with circular boundary handling."""
    def shift(di: int, dj: int) -> np.ndarray:
        return np.roll(np.roll(channel, di, axis=0), dj, axis=1)

    gx = (shift(1, 1) + 2.0 * shift(0, 1) + shift(-1, 1)
          - shift(1, -1) - 2.0 * shift(0, -1) - shift(-1, -1))
    gy = (shift(1, 1) + 2.0 * shift(1, 0) + shift(1, -1)
          - shift(-1, 1) - 2.0 * shift(-1, 0) - shift(-1, -1))
    return np.hypot(gx, gy)


def _blocks(plane: np.ndarray, block: int) -> np.ndarray:
    """(k2*k1, block*block) view of whole blocks; the remainder is cropped."""
    h, w = plane.shape[:2]
    k2, k1 = h // block, w // block
    cropped = plane[:k2 * block, :k1 * block]
    if plane.ndim == 2:
        return cropped.reshape(k2, block, k1, block).transpose(0, 2, 1, 3).reshape(k2 * k1, -1)
    return (cropped.reshape(k2, block, k1, block, -1)
            .transpose(0, 2, 1, 3, 4).reshape(k2 * k1, -1))


def _eme(plane: np.ndarray, block: int) -> float:
    """Enhancement measure: mean log max/min over blocks; degenerate blocks
    (nonpositive minimum) contribute zero."""
    blocks = _blocks(plane, block)
    mx = blocks.max(axis=1)
    mn = blocks.min(axis=1)
    valid = mn > 0
    total = float(np.sum(np.log(mx[valid] / mn[valid])))
    return 2.0 / blocks.shape[0] * total


def _uism(x255: np.ndarray, block: int) -> float:
    total = 0.0
    for ch, weight in enumerate(UISM_LUMA_WEIGHTS):
        plane = x255[:, :, ch]
        edge_map = _sobel_mag_wrap(plane) * plane
        total += weight * _eme(edge_map, block)
    return total


def _uiconm(x255: np.ndarray, block: int) -> float:
    """logAMEE contrast over joint RGB blocks (Michelson-entropy form)."""
    blocks = _blocks(x255, block)
    mx = blocks.max(axis=1)
    mn = blocks.min(axis=1)
    top = mx - mn
    bot = mx + mn
    valid = (top > 0) & (bot > 0)
    ratio = top[valid] / bot[valid]
    return -1.0 / blocks.shape[0] * float(np.sum(ratio * np.log(ratio)))


def uiqm(img: np.ndarray, block: int = UIQM_BLOCK_SIZE) -> float:
    """No-reference underwater quality score on a unit-interval image."""
    img = _check_image(img)
    h, w = img.shape[:2]
    if h < UIQM_MIN_SIZE or w < UIQM_MIN_SIZE:
        raise ValueError(f"image {h}x{w} too small for the quality score "
                         f"(needs at least {UIQM_MIN_SIZE}x{UIQM_MIN_SIZE})")
    x255 = img * 255.0
    c_col, c_sharp, c_con = UIQM_WEIGHTS
    return (c_col * _uicm(x255)
            + c_sharp * _uism(x255, block)
            + c_con * _uiconm(x255, block))


# --------------------------------------------------------------------------
# UCIQE
# --------------------------------------------------------------------------

_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_WHITE = _SRGB_TO_XYZ @ np.ones(3)


def srgb_to_lab(img: np.ndarray) -> np.ndarray:
    """sRGB (unit interval) to CIELab (D65); returns an (H,W,3) L*a*b* array."""
    img = _check_image(img)
    linear = np.where(img <= 0.04045, img / 12.92, ((img + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_TO_XYZ.T
    t = xyz / _XYZ_WHITE
    delta = 6.0 / 29.0
    f = np.where(t > delta ** 3, np.cbrt(t), t / (3.0 * delta ** 2) + 4.0 / 29.0)
    lab = np.empty_like(img)
    lab[:, :, 0] = 116.0 * f[:, :, 1] - 16.0
    lab[:, :, 1] = 500.0 * (f[:, :, 0] - f[:, :, 1])
    lab[:, :, 2] = 200.0 * (f[:, :, 1] - f[:, :, 2])
    return lab


def uciqe(img: np.ndarray) -> float:
    """Chroma-spread / luminance-contrast / saturation score in CIELab.

    Lightness and chroma are normalized by 100; saturation is chroma over
    lightness (zero where lightness is zero). Depends only on the pixel
    population, not on spatial arrangement.
    """
    lab = srgb_to_lab(img)
    lum = lab[:, :, 0].ravel() / 100.0
    chroma = np.hypot(lab[:, :, 1], lab[:, :, 2]).ravel() / 100.0

    sigma_c = float(np.std(chroma))

    n = lum.size
    k = max(1, int(n * UCIQE_QUANTILE))
    lum_sorted = np.sort(lum)
    con_l = float(np.mean(lum_sorted[n - k:]) - np.mean(lum_sorted[:k]))

    sat = np.divide(chroma, lum, out=np.zeros_like(chroma), where=lum > 0)
    mu_s = float(np.mean(sat))

    w_c, w_l, w_s = UCIQE_WEIGHTS
    return w_c * sigma_c + w_l * con_l + w_s * mu_s


# --------------------------------------------------------------------------
# dataset evaluation and histograms
# --------------------------------------------------------------------------

@dataclass
class ImageMetrics:
    id: str
    uiqm: float
    uciqe: float
    mse_255: float | None = None
    psnr_db: float | None = None
    ssim: float | None = None

    def as_record(self) -> dict:
        rec = {"id": self.id, "uiqm": self.uiqm, "uciqe": self.uciqe}
        if self.mse_255 is not None:
            rec.update(mse_255=self.mse_255, psnr_db=self.psnr_db, ssim=self.ssim)
        return rec


@dataclass
class MetricReport:
    per_image: list[ImageMetrics] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)
    aggregates: dict[str, tuple[float, float]] = field(default_factory=dict)

    def to_lines(self) -> list[str]:
        lines = [json.dumps(m.as_record(), sort_keys=True) for m in self.per_image]
        for img_id, err in self.failures:
            lines.append(json.dumps({"id": img_id, "error": err}, sort_keys=True))
        agg = {name: {"mean": m, "std": s} for name, (m, s) in self.aggregates.items()}
        lines.append(json.dumps({"aggregate": agg, "count": len(self.per_image)},
                                sort_keys=True))
        return lines


def _aggregate(per_image: list[ImageMetrics]) -> dict[str, tuple[float, float]]:
    out: dict[str, tuple[float, float]] = {}
    for name in ("mse_255", "psnr_db", "ssim", "uiqm", "uciqe"):
        vals = [getattr(m, name) for m in per_image if getattr(m, name) is not None]
        if vals:
            arr = np.asarray(vals, dtype=np.float64)
            out[name] = (float(arr.mean()), float(arr.std()))
    return out


def evaluate_images(pairs, with_reference: bool) -> MetricReport:
    """Score a sequence of (id, image, reference-or-None) triples.

    Per-image exceptions are recorded as failures; aggregates (mean and
    population std per metric) cover the successes, in input order.
    """
    pairs = list(pairs)
    if not pairs:
        raise ManifestError("no images to evaluate")
    report = MetricReport()
    for img_id, image, reference in pairs:
        try:
            record = ImageMetrics(id=img_id, uiqm=uiqm(image), uciqe=uciqe(image))
            if with_reference:
                if reference is None:
                    raise ValueError("reference image required but missing")
                record.mse_255, record.psnr_db = mse_psnr(image, reference)
                record.ssim = ssim(image, reference)
            report.per_image.append(record)
        except Exception as exc:  # per-image isolation
            report.failures.append((img_id, f"{type(exc).__name__}: {exc}"))
    report.aggregates = _aggregate(report.per_image)
    return report


def quantize_255(img: np.ndarray) -> np.ndarray:
    """Unit-interval floats to integer levels, rounding half away from zero."""
    return np.clip(np.floor(np.asarray(img) * 255.0 + 0.5), 0, 255).astype(np.int64)


def cumulative_histogram(images) -> np.ndarray:
    """(3,256) per-channel counts of 0-255 levels summed over the images."""
    table = np.zeros((3, 256), dtype=np.int64)
    count = 0
    for img in images:
        img = _check_image(img)
        levels = quantize_255(img)
        for c in range(3):
            table[c] += np.bincount(levels[:, :, c].ravel(), minlength=256)
        count += 1
    if count == 0:
        raise ValueError("cumulative_histogram needs at least one image")
    return table


def histogram_csv_lines(table: np.ndarray) -> list[str]:
    lines = ["bin,r,g,b"]
    for i in range(256):
        lines.append(f"{i},{table[0, i]},{table[1, i]},{table[2, i]}")
    return lines
