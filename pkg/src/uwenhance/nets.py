"""The three learned estimators.

The scene-radiance network is a non-downsampling CNN backbone with a
parallel long-range branch: a block that wraps a shared-parameter selective
scan (run over the spatial raster order and over the channel axis) between
1x1 conv stages with a residual connection. The two transmission-map
networks are identical six-layer CNNs instantiated with independent
weights. All heads end in a sigmoid, so outputs stay in [0,1] and every
stage preserves the spatial size.

Weight init is centered uniform with fan-in scaling from a seeded
generator, so builds are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatchError
from .formation import FormationModel
from .ssm import SelectiveSSM, selective_scan


@dataclass
class JNetConfig:
    """Architecture knobs for the scene-radiance network.

    `mic_injection` lists the backbone stages feeding the long-range branch
    (0 = stem output, i = after block i); multiple stages are concatenated
    along channels.
    """

    base_channels: int = 16
    num_blocks: int = 4
    state_size: int = 8
    mic_injection: tuple[int, ...] = (0,)
    se_reduction: int = 4

    def __post_init__(self):
        self.mic_injection = tuple(self.mic_injection)
        if self.base_channels < 4:
            raise ValueError("base_channels must be >= 4")
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if self.state_size < 1:
            raise ValueError("state_size must be >= 1")
        if not self.mic_injection:
            raise ValueError("mic_injection must name at least one stage")
        for idx in self.mic_injection:
            if not 0 <= idx <= self.num_blocks:
                raise ValueError(f"mic_injection index {idx} out of range 0..{self.num_blocks}")
        if self.base_channels % self.se_reduction != 0:
            raise ValueError("base_channels must be divisible by se_reduction")


def _uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    scale = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


class Conv2d:
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator):
        self.w = _uniform_fan_in(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel)
        self.b = Tensor(np.zeros(c_out), requires_grad=True)
        self.padding = (kernel - 1) // 2

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.conv2d(x, self.w, padding=self.padding)
        return ad.add(y, ad.reshape(self.b, (-1, 1, 1)))

    def named_params(self):
        yield "w", self.w
        yield "b", self.b


class InstanceNorm:
    def __init__(self, channels: int):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.instance_norm(x, self.gamma, self.beta)

    def named_params(self):
        yield "gamma", self.gamma
        yield "beta", self.beta


class ConvBlock:
    """conv (same padding) -> instance norm -> mish."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator):
        self.conv = Conv2d(c_in, c_out, kernel, rng)
        self.norm = InstanceNorm(c_out)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.mish(self.norm(self.conv(x)))

    def named_params(self):
        yield from (("conv." + n, p) for n, p in self.conv.named_params())
        yield from (("norm." + n, p) for n, p in self.norm.named_params())


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.w = _uniform_fan_in(rng, (d_in, d_out), d_in)
        self.b = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)

    def named_params(self):
        yield "w", self.w
        yield "b", self.b


class SELayer:
    """Squeeze-and-excitation channel gate: pool -> bottleneck -> sigmoid scale."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        if channels % reduction != 0:
            raise ShapeMismatchError(
                f"SE channels {channels} not divisible by reduction {reduction}")
        hidden = channels // reduction
        self.w1 = _uniform_fan_in(rng, (hidden, channels), channels)
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.w2 = _uniform_fan_in(rng, (channels, hidden), hidden)
        self.b2 = Tensor(np.zeros(channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        pooled = ad.global_avg_pool(x)
        hidden = ad.relu(ad.add(ad.matvec(self.w1, pooled), self.b1))
        scale = ad.sigmoid(ad.add(ad.matvec(self.w2, hidden), self.b2))
        return ad.mul(x, ad.reshape(scale, (-1, 1, 1)))

    def named_params(self):
        yield "w1", self.w1
        yield "b1", self.b1
        yield "w2", self.w2
        yield "b2", self.b2


class CSS:
    """Channel-spatial siamese scan.

    One selective-scan parameter set is shared by both branches; per-branch
    linear adapters reconcile the differing feature widths (channels for the
    spatial branch, flattened spatial size for the channel branch). The
    spatial branch scans pixels in raster order; the channel branch scans
    channels with whole feature maps as step features.
    """

    def __init__(self, channels: int, height: int, width: int, state_size: int,
                 rng: np.random.Generator, d_model: int | None = None):
        self.channels = channels
        self.height = height
        self.width = width
        d_model = channels if d_model is None else d_model
        self.scan = SelectiveSSM.init(d_model, state_size, rng)
        self.spatial_in = Linear(channels, d_model, rng)
        self.spatial_out = Linear(d_model, channels, rng)
        self.channel_in = Linear(height * width, d_model, rng)
        self.channel_out = Linear(d_model, height * width, rng)

    def _check(self, x: Tensor) -> None:
        expected = (self.channels, self.height, self.width)
        if x.shape != expected:
            raise ShapeMismatchError(f"CSS built for {expected}, got {x.shape}")

    def spatial_branch(self, x: Tensor) -> Tensor:
        self._check(x)
        c, h, w = x.shape
        seq = ad.reshape(ad.transpose(x, (1, 2, 0)), (h * w, c))
        seq = self.spatial_out(selective_scan(self.spatial_in(seq), self.scan))
        return ad.transpose(ad.reshape(seq, (h, w, c)), (2, 0, 1))

    def channel_branch(self, x: Tensor) -> Tensor:
        self._check(x)
        c, h, w = x.shape
        seq = ad.reshape(x, (c, h * w))
        seq = self.channel_out(selective_scan(self.channel_in(seq), self.scan))
        return ad.reshape(seq, (c, h, w))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(self.spatial_branch(x), self.channel_branch(x))

    def named_params(self):
        yield from (("scan." + n, p) for n, p in self.scan.named_params())
        yield from (("spatial_in." + n, p) for n, p in self.spatial_in.named_params())
        yield from (("spatial_out." + n, p) for n, p in self.spatial_out.named_params())
        yield from (("channel_in." + n, p) for n, p in self.channel_in.named_params())
        yield from (("channel_out." + n, p) for n, p in self.channel_out.named_params())


class MIC:
    """Scan-in-convolution block: out = Conv.O(CSS(Conv.I(x)) + Conv.I(x)).

    Conv.I / Conv.O are 1x1 conv + instance norm + mish; Conv.I is evaluated
    once and reused for the scan input and the residual addend.
    """

    def __init__(self, c_in: int, c_mid: int, c_out: int, height: int, width: int,
                 state_size: int, rng: np.random.Generator):
        self.conv_in = ConvBlock(c_in, c_mid, 1, rng)
        self.css = CSS(c_mid, height, width, state_size, rng)
        self.conv_out = ConvBlock(c_mid, c_out, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        inner = self.conv_in(x)
        return self.conv_out(ad.add(self.css(inner), inner))

    def named_params(self):
        yield from (("conv_in." + n, p) for n, p in self.conv_in.named_params())
        yield from (("css." + n, p) for n, p in self.css.named_params())
        yield from (("conv_out." + n, p) for n, p in self.conv_out.named_params())


class JNet:
    """Scene-radiance estimator: CNN backbone plus the parallel scan branch.

    Stem 1x1 conv widens 3 -> base channels; `num_blocks` 3x3 conv blocks
    extract features without downsampling; the scan branch consumes the
    configured stages; a fusion block (SE + 3x3 conv block) selects across
    the concatenated backbone and branch features; a 1x1 head + sigmoid maps
    back to RGB in [0,1].
    """

    def __init__(self, config: JNetConfig, height: int, width: int,
                 rng: np.random.Generator):
        bc = config.base_channels
        self.config = config
        self.stem = Conv2d(3, bc, 1, rng)
        self.blocks = [ConvBlock(bc, bc, 3, rng) for _ in range(config.num_blocks)]
        mic_in = bc * len(config.mic_injection)
        self.mic = MIC(mic_in, bc, bc, height, width, config.state_size, rng)
        self.fuse_se = SELayer(2 * bc, config.se_reduction, rng)
        self.fuse = ConvBlock(2 * bc, bc, 3, rng)
        self.head = Conv2d(bc, 3, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        stages = [self.stem(x)]
        feat = stages[0]
        for block in self.blocks:
            feat = block(feat)
            stages.append(feat)
        picked = [stages[i] for i in self.config.mic_injection]
        branch = self.mic(picked[0] if len(picked) == 1 else ad.concat(picked, axis=0))
        fused = self.fuse(self.fuse_se(ad.concat([feat, branch], axis=0)))
        return ad.sigmoid(self.head(fused))

    def named_params(self):
        yield from (("stem." + n, p) for n, p in self.stem.named_params())
        for i, block in enumerate(self.blocks):
            yield from ((f"block{i}." + n, p) for n, p in block.named_params())
        yield from (("mic." + n, p) for n, p in self.mic.named_params())
        yield from (("fuse_se." + n, p) for n, p in self.fuse_se.named_params())
        yield from (("fuse." + n, p) for n, p in self.fuse.named_params())
        yield from (("head." + n, p) for n, p in self.head.named_params())


class TNet:
    """Transmission-map estimator: six conv layers.

    1x1 conv widens the input, four 3x3 conv blocks follow, and the output
    layer is SE-gated before a 1x1 conv + sigmoid.
    """

    def __init__(self, channels: int, se_reduction: int, rng: np.random.Generator):
        self.conv1 = Conv2d(3, channels, 1, rng)
        self.blocks = [ConvBlock(channels, channels, 3, rng) for _ in range(4)]
        self.se = SELayer(channels, se_reduction, rng)
        self.head = Conv2d(channels, 3, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        feat = self.conv1(x)
        for block in self.blocks:
            feat = block(feat)
        return ad.sigmoid(self.head(self.se(feat)))

    def named_params(self):
        yield from (("conv1." + n, p) for n, p in self.conv1.named_params())
        for i, block in enumerate(self.blocks):
            yield from ((f"block{i}." + n, p) for n, p in block.named_params())
        yield from (("se." + n, p) for n, p in self.se.named_params())
        yield from (("head." + n, p) for n, p in self.head.named_params())


class Enhancer:
    """Bundle of the three estimators plus the trainable PSF (PSF-model only).

    The transmission nets share the scene net's input; under single-map
    formation models only the direct-map net participates.
    """

    def __init__(self, jnet_config: JNetConfig, tnet_channels: int, size: int,
                 formation_model: FormationModel, seed: int):
        rng = np.random.default_rng(seed)
        self.formation_model = formation_model
        self.size = size
        self.jnet = JNet(jnet_config, size, size, rng)
        self.tdnet = TNet(tnet_channels, jnet_config.se_reduction, rng)
        self.tbnet = TNet(tnet_channels, jnet_config.se_reduction, rng)
        self.psf = (Tensor(np.zeros((9, 9)), requires_grad=True)
                    if formation_model is FormationModel.JAFFE_MCGLAMERY else None)

    def named_params(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for n, p in self.jnet.named_params():
            params["jnet." + n] = p
        for n, p in self.tdnet.named_params():
            params["td." + n] = p
        for n, p in self.tbnet.named_params():
            params["tb." + n] = p
        if self.psf is not None:
            params["psf.g"] = self.psf
        return params

    def zero_grads(self) -> None:
        for p in self.named_params().values():
            p.zero_grad()
