"""Physical image-formation models and the reconstruction-consistency engine.

Images are H x W x 3 float arrays on [0, 1]. The revised underwater model
composes a degraded observation from four latent components,

    I = J * T_D + (1 - T_B) * A,

with per-channel direct and backscatter transmission maps (attenuation is
wavelength dependent, so both maps carry 3 channels). Three alternative
models are provided for ablation: a single-transmission scattering model,
a reflectance-illumination product, and a point-spread-function variant
adding a forward-scatter convolution term.

`synthesize_degraded` is the inverse direction (components -> observation)
and doubles as the test oracle for reconstruction round trips.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatchError


class FormationModel(str, Enum):
    REVISED = "revised"
    KOSCHMIEDER = "koschmieder"
    RETINEX = "retinex"
    JAFFE_MCGLAMERY = "jaffe"


@dataclass
class ComponentSet:
    """Latent components of the revised model.

    j: scene radiance; t_d / t_b: direct and backscatter transmission maps
    (H,W,3, values in [0,1]); a: global background light, 3-vector in [0,1].
    """

    j: np.ndarray
    t_d: np.ndarray
    t_b: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64).reshape(3)


@dataclass
class Reconstruction:
    """`image` is clamped to [0,1]; `raw` is the pre-clamp value; `clamped`
    records whether any pixel was clipped."""

    image: np.ndarray
    raw: np.ndarray
    clamped: bool


def _finish(raw: np.ndarray) -> Reconstruction:
    image = np.clip(raw, 0.0, 1.0)
    return Reconstruction(image=image, raw=raw, clamped=bool(np.any(image != raw)))


def _check_same_shape(*arrays: np.ndarray) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"component shapes differ: {sorted(shapes)}")


def reconstruct_revised(components: ComponentSet) -> Reconstruction:
    """I' = J * T_D + (1 - T_B) * A."""
    j, t_d, t_b = components.j, components.t_d, components.t_b
    _check_same_shape(j, t_d, t_b)
    raw = j * t_d + (1.0 - t_b) * components.a
    return _finish(raw)


def reconstruct_koschmieder(j: np.ndarray, t: np.ndarray, a) -> Reconstruction:
    """Single-transmission scattering model: I = J * T + (1 - T) * A."""
    _check_same_shape(j, t)
    a = np.asarray(a, dtype=np.float64).reshape(3)
    raw = j * t + (1.0 - t) * a
    return _finish(raw)


def reconstruct_retinex(reflectance: np.ndarray, illumination: np.ndarray) -> Reconstruction:
    """Reflectance-illumination product: I = R * L."""
    _check_same_shape(reflectance, illumination)
    return _finish(reflectance * illumination)


def reconstruct_jaffe(j: np.ndarray, t: np.ndarray, a, psf: np.ndarray) -> Reconstruction:
    """Point-spread-function model: I = J*T + (1-T)*A + (J*T) conv g.

    `psf` is a single 9x9 kernel applied to every channel with zero "same"
    padding.
    """
    _check_same_shape(j, t)
    psf = np.asarray(psf, dtype=np.float64)
    if psf.shape != (9, 9):
        raise ShapeMismatchError(f"point spread function must be 9x9, got {psf.shape}")
    a = np.asarray(a, dtype=np.float64).reshape(3)
    direct = j * t
    raw = direct + (1.0 - t) * a + _convolve_same(direct, psf)
    return _finish(raw)


def _convolve_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel zero-padded cross-correlation preserving spatial size."""
    k = kernel.shape[0]
    pad = (k - 1) // 2
    out = np.empty_like(img)
    padded = np.pad(img, ((pad, pad), (pad, pad), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(0, 1))
    for c in range(img.shape[2]):
        out[:, :, c] = np.einsum("ijuv,uv->ij", windows[:, :, c], kernel)
    return out


def synthesize_degraded(j: np.ndarray, depth: np.ndarray, beta_d, beta_b,
                        a) -> tuple[np.ndarray, ComponentSet]:
    """Forward degradation from scene radiance and a depth map.

    T_D = exp(-beta_d * depth) and T_B = exp(-beta_b * depth) per channel,
    then I = J*T_D + (1-T_B)*A. Returns the (unclamped) observation and the
    ground-truth components, which reconstruct back to it exactly.
    """
    j = np.asarray(j, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    beta_d = np.asarray(beta_d, dtype=np.float64).reshape(3)
    beta_b = np.asarray(beta_b, dtype=np.float64).reshape(3)
    if np.any(depth < 0):
        raise ValueError("depth must be nonnegative")
    if np.any(beta_d <= 0) or np.any(beta_b <= 0):
        raise ValueError("attenuation coefficients must be positive")
    if j.shape[:2] != depth.shape:
        raise ShapeMismatchError(
            f"depth map {depth.shape} does not match image {j.shape[:2]}")
    t_d = np.exp(-beta_d[None, None, :] * depth[:, :, None])
    t_b = np.exp(-beta_b[None, None, :] * depth[:, :, None])
    components = ComponentSet(j=j, t_d=t_d, t_b=t_b, a=a)
    image = j * t_d + (1.0 - t_b) * components.a
    return image, components


# --------------------------------------------------------------------------
# differentiable reconstruction (training path, (3,H,W) tensors)
# --------------------------------------------------------------------------

def reconstruct_tensor(model: FormationModel, j: Tensor, t_d: Tensor,
                       t_b: Tensor | None, a: Tensor | None,
                       psf: Tensor | None = None) -> Tensor:
    """Recompose the observation from component tensors, clamped to [0,1].

    `a` is a constant (3,) tensor broadcast as (3,1,1); the single-T models
    use `t_d` as their transmission/illumination estimate and ignore `t_b`.
    """
    if model is FormationModel.RETINEX:
        return ad.clamp01(ad.mul(j, t_d))
    assert a is not None
    a3 = ad.reshape(a, (3, 1, 1))
    if model is FormationModel.REVISED:
        assert t_b is not None
        raw = ad.add(ad.mul(j, t_d), ad.mul(ad.sub(1.0, t_b), a3))
    elif model is FormationModel.KOSCHMIEDER:
        raw = ad.add(ad.mul(j, t_d), ad.mul(ad.sub(1.0, t_d), a3))
    elif model is FormationModel.JAFFE_MCGLAMERY:
        assert psf is not None
        direct = ad.mul(j, t_d)
        kernel = ad.reshape(psf, (1, 1, 9, 9))
        blurred = ad.concat(
            [ad.conv2d(direct[c:c + 1], kernel, padding=4) for c in range(3)], axis=0)
        raw = ad.add(ad.add(direct, ad.mul(ad.sub(1.0, t_d), a3)), blurred)
    else:
        raise ValueError(f"unknown formation model: {model}")
    return ad.clamp01(raw)
